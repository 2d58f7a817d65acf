//! Twelve-point acceptance gate for the whole solver stack.
//!
//! One test function runs every criterion in order and prints exactly one
//! verdict line per criterion; run with
//! `cargo test --test acceptance -- --nocapture` to watch them. Criterion
//! 10 (parallel speedup) is informational: its line prints like the
//! others but a failure there never fails the suite, since it measures
//! the host's core count as much as the code. Every other criterion
//! gates.
//!
//! Reference values come from independent oracles computed inside this
//! file: a dense proximal-gradient solver for the convex fixture, grid
//! search for the scalar prox, and central finite differences for the
//! gradients. None of them share code with the solver under test.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use badmm_core::config::{DelayTable, FilterSchedule, Mode, RhoTable, RunConfig};
use badmm_core::metrics::{check_theorem1, kkt_residuals, t_epsilon, TheoremParams};
use badmm_core::problems::synthetic::{generate, SyntheticSpec};
use badmm_core::problems::{LocalDataset, LossKind, ProblemInstance, Regularizer, Sample};
use badmm_core::trajectory::EventKind;
use badmm_core::transport::{
    replay_events, run_async_sim, run_async_sim_barrier, run_async_threads, run_sync, SimEngine,
    SimSchedule,
};

struct Verdict {
    number: usize,
    name: &'static str,
    gating: bool,
    outcome: Result<String, String>,
}

fn verdict(number: usize, name: &'static str, outcome: Result<String, String>) -> Verdict {
    Verdict {
        number,
        name,
        gating: true,
        outcome,
    }
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    verdicts.push(criterion_1());
    verdicts.push(criterion_2());
    let (c3, c4) = criterion_3_and_4();
    verdicts.push(c3);
    verdicts.push(c4);
    verdicts.push(criterion_5());
    verdicts.push(criterion_6());
    verdicts.push(criterion_7());
    verdicts.push(criterion_8());
    verdicts.push(criterion_9());
    verdicts.push(criterion_10());
    verdicts.push(criterion_11());
    verdicts.push(criterion_12());

    // The harness leaves its "test acceptance ..." prefix unterminated
    // under --nocapture; break the line so every verdict starts a row.
    println!();
    let mut failed = Vec::new();
    for v in &verdicts {
        let (tag, detail) = match &v.outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:02} {} {}: {}", v.number, tag, v.name, detail);
        if v.gating && v.outcome.is_err() {
            failed.push(v.number);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---------------------------------------------------------------------------
// Shared fixtures.

/// The convex fixture: 50 samples, 20 features in 4 blocks, least squares
/// with an l1 penalty, two workers.
fn lasso_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        workers: 2,
        blocks: 4,
        block_width: 5,
        samples: 50,
        density: 0.5,
        noise: 0.25,
        kind: LossKind::LeastSquares,
        seed,
    }
}

fn lasso_problem(lambda: f64) -> ProblemInstance {
    let d = generate(&lasso_spec(2)).unwrap();
    ProblemInstance::from_shards(
        LossKind::LeastSquares,
        d.shards,
        d.block_map,
        Regularizer::new(lambda, f64::INFINITY).unwrap(),
    )
    .unwrap()
}

/// The convex fixture with every label multiplied by `scale`. Scaling the
/// labels scales the stationarity metric's starting value, which is how
/// criterion 5 arranges for all three of its tolerance thresholds to be
/// crossed mid-run rather than trivially at the first sample.
fn scaled_lasso_problem(lambda: f64, scale: f64) -> ProblemInstance {
    let d = generate(&lasso_spec(2)).unwrap();
    let shards = d
        .shards
        .into_iter()
        .map(|shard| {
            let samples = shard
                .samples()
                .iter()
                .map(|s| Sample {
                    features: s.features.clone(),
                    label: s.label * scale,
                })
                .collect();
            LocalDataset::new(samples).unwrap()
        })
        .collect();
    ProblemInstance::from_shards(
        LossKind::LeastSquares,
        shards,
        d.block_map,
        Regularizer::new(lambda, f64::INFINITY).unwrap(),
    )
    .unwrap()
}

/// The four-by-four fixture used by the epoch-identity and thread checks.
fn four_by_four_problem() -> ProblemInstance {
    let spec = SyntheticSpec {
        workers: 4,
        blocks: 4,
        block_width: 3,
        samples: 80,
        density: 0.4,
        noise: 0.1,
        kind: LossKind::LeastSquares,
        seed: 31,
    };
    let d = generate(&spec).unwrap();
    ProblemInstance::from_shards(
        LossKind::LeastSquares,
        d.shards,
        d.block_map,
        Regularizer::new(0.05, 1e4).unwrap(),
    )
    .unwrap()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Independent references.

/// Dense proximal-gradient (ISTA) solver for the global l1-regularized
/// least-squares objective, built straight from the raw samples. Shares no
/// state or code path with the solver under test.
fn ista_reference(problem: &ProblemInstance, lambda: f64, iters: usize) -> Vec<f64> {
    let dim = problem.block_map.total_dim();
    let mut h = vec![vec![0.0; dim]; dim];
    let mut c = vec![0.0; dim];
    for oracle in &problem.oracles {
        let m = oracle.num_samples() as f64;
        for s in oracle.data().samples() {
            for (ga, va) in s.features.iter() {
                c[ga as usize] += va * s.label / m;
                for (gb, vb) in s.features.iter() {
                    h[ga as usize][gb as usize] += va * vb / m;
                }
            }
        }
    }
    let mut v = vec![1.0; dim];
    let mut eig = 1.0;
    for _ in 0..1000 {
        let w: Vec<f64> = h
            .iter()
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let n = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        eig = n;
        v = w.into_iter().map(|a| a / n).collect();
    }
    let step = 1.0 / eig;
    let mut z = vec![0.0; dim];
    for _ in 0..iters {
        let mut moved: f64 = 0.0;
        let mut next = vec![0.0; dim];
        for k in 0..dim {
            let grad: f64 = h[k].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() - c[k];
            let vk = z[k] - step * grad;
            let t = lambda * step;
            next[k] = if vk > t {
                vk - t
            } else if vk < -t {
                vk + t
            } else {
                0.0
            };
            moved = moved.max((next[k] - z[k]).abs());
        }
        z = next;
        if moved < 1e-15 {
            break;
        }
    }
    z
}

// ---------------------------------------------------------------------------
// Criteria.

/// After every (primal, dual) update pair the block gradient at the cached
/// consensus value and the fresh multiplier must cancel exactly; the run
/// reports the worst violation it ever saw.
fn criterion_1() -> Verdict {
    let name = "dual identity after every update pair";
    let start = Instant::now();
    let problem = four_by_four_problem();
    let config = RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(8.0),
        gamma: 0.5,
        delay: DelayTable::uniform(3),
        seed: 1,
        max_epochs: 1000,
        log_events: false,
        ..RunConfig::default()
    };
    let outcome = match run_async_sim(&problem, &config) {
        Ok(out) => {
            let wall = start.elapsed().as_secs_f64();
            let detail = format!(
                "max residual {:.2e} over {} epochs (budget 1e-10), {:.2}s (budget 5s)",
                out.max_dual_residual, out.worker_steps, wall
            );
            if out.max_dual_residual <= 1e-10 && out.worker_steps == 4000 && wall < 5.0 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Err(e) => Err(format!("run failed: {e}")),
    };
    verdict(1, name, outcome)
}

/// The synchronous mode must land on the same minimizer as an independent
/// dense proximal-gradient solve of the identical objective.
fn criterion_2() -> Verdict {
    let name = "sync solver matches the proximal-gradient reference";
    let start = Instant::now();
    let problem = lasso_problem(0.1);
    let reference = ista_reference(&problem, 0.1, 500_000);
    let config = RunConfig {
        mode: Mode::Sync,
        rho: RhoTable::uniform(2.0),
        gamma: 0.2,
        max_epochs: 5000,
        log_events: false,
        ..RunConfig::default()
    };
    let outcome = match run_sync(&problem, &config) {
        Ok(out) => {
            let dev = max_dev(&out.final_z(&problem), &reference);
            let wall = start.elapsed().as_secs_f64();
            let detail =
                format!("max deviation {dev:.2e} (budget 1e-4), {wall:.2}s (budget 10s)");
            if dev <= 1e-4 && wall < 10.0 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Err(e) => Err(format!("run failed: {e}")),
    };
    verdict(2, name, outcome)
}

/// Criteria 3 and 4 share three long bounded-delay runs on the convex
/// fixture, at parameters the convergence-condition checker certifies.
/// Criterion 3 wants the per-step increments of x, y and the committed z
/// to die out (tail window = last 10% of steps); criterion 4 wants the
/// KKT residuals of the final state below 1e-4.
fn criterion_3_and_4() -> (Verdict, Verdict) {
    let start = Instant::now();
    let problem = lasso_problem(0.1);
    let l0 = problem
        .objective(&vec![0.0; problem.block_map.total_dim()])
        .unwrap();

    let base = RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(4.0),
        gamma: 200.0,
        delay: DelayTable::uniform(5),
        max_epochs: 60_000,
        log_events: false,
        metric_every: u64::MAX,
        ..RunConfig::default()
    };
    let params = TheoremParams::from_problem(&problem, &base).unwrap();
    let report = check_theorem1(&params, l0);
    if !report.pass {
        let msg = format!(
            "condition check rejects rho=4 gamma=200 at T=5 ({} violations)",
            report.violations.len()
        );
        return (
            verdict(3, "bounded-delay increments vanish", Err(msg.clone())),
            verdict(4, "kkt residuals at termination", Err(msg)),
        );
    }
    let min_alpha = report
        .alpha
        .iter()
        .map(|a| a.value)
        .fold(f64::INFINITY, f64::min);
    let min_beta = report
        .beta
        .iter()
        .map(|b| b.value)
        .fold(f64::INFINITY, f64::min);

    let mut worst_tail = [0.0_f64; 3];
    let mut worst_kkt = (0.0_f64, 0.0_f64, 0.0_f64);
    for seed in [1, 2, 3] {
        let config = RunConfig {
            seed,
            ..base.clone()
        };
        let mut engine = SimEngine::new(&problem, &config, SimSchedule::Seeded).unwrap();
        let mut prev = state_parts(&engine);
        let mut diffs: Vec<[f64; 3]> = Vec::new();
        loop {
            match engine.step() {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => {
                    let msg = format!("seed {seed} failed: {e}");
                    return (
                        verdict(3, "bounded-delay increments vanish", Err(msg.clone())),
                        verdict(4, "kkt residuals at termination", Err(msg)),
                    );
                }
            }
            let cur = state_parts(&engine);
            diffs.push([
                euclid(&cur[0], &prev[0]),
                euclid(&cur[1], &prev[1]),
                euclid(&cur[2], &prev[2]),
            ]);
            prev = cur;
        }
        let out = engine.finish().unwrap();
        let tail = &diffs[diffs.len() - diffs.len() / 10..];
        for part in 0..3 {
            let m = tail.iter().map(|d| d[part]).fold(0.0_f64, f64::max);
            worst_tail[part] = worst_tail[part].max(m);
        }
        let (r1, r2, r3) = kkt_residuals(&out.final_snapshot, &problem);
        worst_kkt.0 = worst_kkt.0.max(r1);
        worst_kkt.1 = worst_kkt.1.max(r2);
        worst_kkt.2 = worst_kkt.2.max(r3);
    }
    let wall = start.elapsed().as_secs_f64();

    let d3 = format!(
        "tail maxima x {:.2e}, y {:.2e}, z {:.2e} (budget 1e-6 each; min alpha {:.2}, min beta {:.3}), {:.1}s (budget 30s)",
        worst_tail[0], worst_tail[1], worst_tail[2], min_alpha, min_beta, wall
    );
    let pass3 = worst_tail.iter().all(|&m| m < 1e-6) && wall < 30.0;
    let d4 = format!(
        "worst residuals ({:.2e}, {:.2e}, {:.2e}) over 3 seeds (budget 1e-4 each)",
        worst_kkt.0, worst_kkt.1, worst_kkt.2
    );
    let pass4 = worst_kkt.0 < 1e-4 && worst_kkt.1 < 1e-4 && worst_kkt.2 < 1e-4;
    (
        verdict(
            3,
            "bounded-delay increments vanish",
            if pass3 { Ok(d3) } else { Err(d3) },
        ),
        verdict(
            4,
            "kkt residuals at termination",
            if pass4 { Ok(d4) } else { Err(d4) },
        ),
    )
}

/// Splits the live engine state into the worker primals, the multipliers,
/// and the committed consensus blocks, in a fixed order.
fn state_parts(engine: &SimEngine) -> [Vec<f64>; 3] {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for w in engine.workers() {
        for &j in w.neighbors() {
            xs.extend_from_slice(&w.x(j).values);
            ys.extend_from_slice(&w.y(j).values);
        }
    }
    for s in engine.servers() {
        zs.extend_from_slice(&s.z().values);
    }
    [xs, ys, zs]
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The time-to-tolerance curve must scale like 1/epsilon: the products
/// T(eps) * eps for eps in {1e-1, 1e-2, 1e-3} stay within a factor of 10
/// of one another. The fixture's labels are scaled so its starting
/// stationarity value sits just above the loosest threshold, making every
/// crossing nontrivial.
fn criterion_5() -> Verdict {
    let name = "time-to-tolerance scales inversely with tolerance";
    let problem = scaled_lasso_problem(0.026, 0.26);
    let config = RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(4.0),
        gamma: 1.0,
        delay: DelayTable::uniform(0),
        seed: 5,
        max_epochs: 4000,
        log_events: false,
        metric_every: u64::MAX,
        ..RunConfig::default()
    };
    let outcome = match run_async_sim(&problem, &config) {
        Ok(out) => {
            let series: Vec<f64> = out
                .trajectory
                .commit_p_series()
                .iter()
                .map(|&(_, p)| p)
                .collect();
            let p0 = series.first().copied().unwrap_or(f64::NAN);
            let mut products = Vec::new();
            let mut missing = Vec::new();
            for eps in [0.1, 0.01, 0.001] {
                match t_epsilon(&series, eps) {
                    Some(pos) => products.push((pos + 1) as f64 * eps),
                    None => missing.push(eps),
                }
            }
            if !missing.is_empty() {
                Err(format!("thresholds never reached: {missing:?} (P0 {p0:.3})"))
            } else {
                let hi = products.iter().fold(0.0_f64, |a, &b| a.max(b));
                let lo = products.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                let ratio = hi / lo;
                let detail = format!(
                    "products {:?}, spread {ratio:.2}x (budget 10x), P0 {p0:.3}",
                    products
                );
                if ratio <= 10.0 && p0 > 0.1 {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }
        }
        Err(e) => Err(format!("run failed: {e}")),
    };
    verdict(5, name, outcome)
}

/// With the significance filter off, delta-encoded pushes and direct
/// payloads must drive the servers through the same trajectory. The two
/// engines share a seed, so they take identical schedules; the comparison
/// covers both the in-progress and the committed consensus state after
/// every single event.
fn criterion_6() -> Verdict {
    let name = "delta pushes reproduce the direct trajectory";
    let problem = lasso_problem(0.1);
    let mk = |delta_push: bool| RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(4.0),
        gamma: 1.0,
        delay: DelayTable::uniform(3),
        delta_push,
        seed: 13,
        max_epochs: 2000,
        log_events: false,
        metric_every: u64::MAX,
        ..RunConfig::default()
    };
    let delta_cfg = mk(true);
    let direct_cfg = mk(false);
    let mut delta = SimEngine::new(&problem, &delta_cfg, SimSchedule::Seeded).unwrap();
    let mut direct = SimEngine::new(&problem, &direct_cfg, SimSchedule::Seeded).unwrap();
    let mut worst = 0.0_f64;
    loop {
        let a = delta.step().unwrap();
        let b = direct.step().unwrap();
        if a != b {
            return verdict(6, name, Err("engines fell out of lockstep".into()));
        }
        for (sa, sb) in delta.servers().iter().zip(direct.servers()) {
            worst = worst.max(max_dev(&sa.z_dirty().values, &sb.z_dirty().values));
            worst = worst.max(max_dev(&sa.z().values, &sb.z().values));
        }
        if !a {
            break;
        }
    }
    let detail = format!("max server-state deviation {worst:.2e} over the full run (budget 1e-9)");
    let outcome = if worst <= 1e-9 { Ok(detail) } else { Err(detail) };
    verdict(6, name, outcome)
}

/// A decaying significance filter must actually drop a nontrivial share
/// of pushes while leaving the final objective within 1% of the
/// unfiltered run's.
fn criterion_7() -> Verdict {
    let name = "significance filter saves messages without drift";
    let problem = lasso_problem(0.1);
    let mk = |filter: FilterSchedule| RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(4.0),
        gamma: 1.0,
        delay: DelayTable::uniform(3),
        filter,
        seed: 11,
        max_epochs: 6000,
        log_events: false,
        ..RunConfig::default()
    };
    let plain = match run_async_sim(&problem, &mk(FilterSchedule::Off)) {
        Ok(out) => out,
        Err(e) => return verdict(7, name, Err(format!("unfiltered run failed: {e}"))),
    };
    let filtered = match run_async_sim(&problem, &mk(FilterSchedule::Decay(0.01))) {
        Ok(out) => out,
        Err(e) => return verdict(7, name, Err(format!("filtered run failed: {e}"))),
    };
    let o_plain = plain.trajectory.last_objective().unwrap();
    let o_filt = filtered.trajectory.last_objective().unwrap();
    let rel = (o_filt - o_plain).abs() / o_plain.abs();
    let fraction = filtered.filtered_fraction();
    let detail = format!(
        "objective drift {rel:.2e} (budget 1e-2), filtered fraction {:.1}% (floor 10%)",
        100.0 * fraction
    );
    let outcome = if rel <= 0.01 && fraction > 0.10 {
        Ok(detail)
    } else {
        Err(detail)
    };
    verdict(7, name, outcome)
}

/// The zero-delay simulator under a barrier schedule is the synchronous
/// loop, row for row: same commit metrics to 1e-12 and the same final
/// consensus vector.
fn criterion_8() -> Verdict {
    let name = "zero-delay barrier schedule equals the sync loop";
    let problem = lasso_problem(0.1);
    let sim_cfg = RunConfig {
        mode: Mode::AsyncSim,
        rho: RhoTable::uniform(4.0),
        gamma: 0.5,
        delay: DelayTable::uniform(0),
        seed: 3,
        max_epochs: 200,
        log_events: false,
        metric_every: u64::MAX,
        ..RunConfig::default()
    };
    let sync_cfg = RunConfig {
        mode: Mode::Sync,
        ..sim_cfg.clone()
    };
    let via_sim = match run_async_sim_barrier(&problem, &sim_cfg) {
        Ok(out) => out,
        Err(e) => return verdict(8, name, Err(format!("sim run failed: {e}"))),
    };
    let via_sync = match run_sync(&problem, &sync_cfg) {
        Ok(out) => out,
        Err(e) => return verdict(8, name, Err(format!("sync run failed: {e}"))),
    };
    let rows_sim: Vec<_> = via_sim
        .trajectory
        .rows
        .iter()
        .filter(|r| r.kind == EventKind::Commit)
        .collect();
    let rows_sync: Vec<_> = via_sync
        .trajectory
        .rows
        .iter()
        .filter(|r| r.kind == EventKind::Commit)
        .collect();
    if rows_sim.len() != rows_sync.len() {
        return verdict(
            8,
            name,
            Err(format!(
                "commit row counts differ: {} vs {}",
                rows_sim.len(),
                rows_sync.len()
            )),
        );
    }
    let mut worst = 0.0_f64;
    for (a, b) in rows_sim.iter().zip(&rows_sync) {
        let oa = a.objective.unwrap_or(f64::NAN);
        let ob = b.objective.unwrap_or(f64::NAN);
        let pa = a.stationarity.unwrap_or(f64::NAN);
        let pb = b.stationarity.unwrap_or(f64::NAN);
        worst = worst.max((oa - ob).abs()).max((pa - pb).abs());
    }
    let z_dev = max_dev(&via_sim.final_z(&problem), &via_sync.final_z(&problem));
    let detail = format!(
        "{} commit rows, worst metric gap {worst:.2e} (budget 1e-12), final z gap {z_dev:.2e}",
        rows_sim.len()
    );
    let outcome = if worst <= 1e-12 && z_dev <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    };
    verdict(8, name, outcome)
}

/// Ten threaded runs must every one of them converge (KKT residuals below
/// 1e-3) and replay exactly: feeding the recorded event order back through
/// the deterministic state machines reproduces the final consensus to
/// 1e-9.
fn criterion_9() -> Verdict {
    let name = "threaded runs converge and replay exactly";
    let problem = four_by_four_problem();
    let mut worst_kkt = 0.0_f64;
    let mut worst_replay = 0.0_f64;
    for seed in 0..10u64 {
        let config = RunConfig {
            mode: Mode::AsyncThreads,
            rho: RhoTable::uniform(8.0),
            gamma: 0.5,
            seed,
            max_epochs: 8000,
            log_events: false,
            ..RunConfig::default()
        };
        let (out, events) = match run_async_threads(&problem, &config) {
            Ok(pair) => pair,
            Err(e) => return verdict(9, name, Err(format!("seed {seed} failed: {e}"))),
        };
        let (r1, r2, r3) = kkt_residuals(&out.final_snapshot, &problem);
        worst_kkt = worst_kkt.max(r1).max(r2).max(r3);
        let (_, servers) = match replay_events(&problem, &config, &events) {
            Ok(pair) => pair,
            Err(e) => return verdict(9, name, Err(format!("seed {seed} replay failed: {e}"))),
        };
        for (live, replayed) in out.servers.iter().zip(&servers) {
            worst_replay = worst_replay.max(max_dev(&live.z().values, &replayed.z().values));
            worst_replay =
                worst_replay.max(max_dev(&live.z_dirty().values, &replayed.z_dirty().values));
        }
    }
    let detail = format!(
        "worst kkt residual {worst_kkt:.2e} (budget 1e-3), worst replay gap {worst_replay:.2e} (budget 1e-9) over 10 runs"
    );
    let outcome = if worst_kkt < 1e-3 && worst_replay <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    };
    verdict(9, name, outcome)
}

/// Wall-clock comparison at a fixed total epoch budget: the same
/// four-worker problem executed by the single-threaded simulator versus
/// one thread per worker. Passing needs spare cores, so the verdict is
/// informational and never gates the suite.
fn criterion_10() -> Verdict {
    let name = "parallel speedup (informational)";
    let spec = SyntheticSpec {
        workers: 4,
        blocks: 4,
        block_width: 32,
        samples: 8000,
        density: 0.3,
        noise: 0.1,
        kind: LossKind::LeastSquares,
        seed: 77,
    };
    let d = generate(&spec).unwrap();
    let problem = ProblemInstance::from_shards(
        LossKind::LeastSquares,
        d.shards,
        d.block_map,
        Regularizer::new(0.01, 1e4).unwrap(),
    )
    .unwrap();
    // Zero metric cadence on both sides: per-commit diagnostics walk the
    // whole dataset, and only the simulator evaluates them mid-run, so
    // leaving them on would measure bookkeeping instead of parallelism.
    let mk = |mode: Mode| RunConfig {
        mode,
        rho: RhoTable::uniform(8.0),
        gamma: 0.5,
        delay: DelayTable::uniform(0),
        seed: 9,
        max_epochs: 2000,
        log_events: false,
        metric_every: 0,
        ..RunConfig::default()
    };
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let start = Instant::now();
    if let Err(e) = run_async_sim(&problem, &mk(Mode::AsyncSim)) {
        return Verdict {
            number: 10,
            name,
            gating: false,
            outcome: Err(format!("sim run failed: {e}")),
        };
    }
    let serial = start.elapsed().as_secs_f64();
    let start = Instant::now();
    if let Err(e) = run_async_threads(&problem, &mk(Mode::AsyncThreads)) {
        return Verdict {
            number: 10,
            name,
            gating: false,
            outcome: Err(format!("threaded run failed: {e}")),
        };
    }
    let threaded = start.elapsed().as_secs_f64();
    let ratio = threaded / serial;
    let detail = format!(
        "threaded/serial wall ratio {ratio:.2} (target <= 0.6 on >= 4 cores; {cores} available), {serial:.2}s vs {threaded:.2}s; never gates"
    );
    Verdict {
        number: 10,
        name,
        gating: false,
        outcome: if ratio <= 0.6 { Ok(detail) } else { Err(detail) },
    }
}

/// The scalar prox must match a brute-force grid argmin of its defining
/// objective and be nonexpansive.
fn criterion_11() -> Verdict {
    let name = "prox matches grid argmin and is nonexpansive";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_11);
    let mut worst_arg = 0.0_f64;
    for _ in 0..1000 {
        let v: f64 = rng.gen_range(-3.0..3.0);
        let lambda: f64 = rng.gen_range(0.0..2.0);
        let mu: f64 = rng.gen_range(0.5..10.0);
        let clip = if rng.gen_bool(0.3) {
            f64::INFINITY
        } else {
            rng.gen_range(0.05..4.0)
        };
        let reg = Regularizer::new(lambda, clip).unwrap();
        let got = reg.prox_scalar(v, mu);

        // Grid argmin of lambda|u| + (mu/2)(u - v)^2 over |u| <= clip.
        let bound = clip.min(v.abs() + lambda / mu + 1.0);
        let step = 1e-4;
        let n = (2.0 * bound / step).ceil() as usize;
        let objective = |u: f64| lambda * u.abs() + 0.5 * mu * (u - v) * (u - v);
        let mut best = (f64::INFINITY, f64::NAN);
        let mut consider = |u: f64| {
            let val = objective(u);
            if val < best.0 {
                best = (val, u);
            }
        };
        for i in 0..=n {
            consider((-bound + i as f64 * step).min(bound));
        }
        consider(0.0);
        consider(bound);
        consider(-bound);
        worst_arg = worst_arg.max((got - best.1).abs());
    }

    let mut worst_expansion = 0.0_f64;
    for _ in 0..1000 {
        let lambda: f64 = rng.gen_range(0.0..2.0);
        let mu: f64 = rng.gen_range(0.5..10.0);
        let clip = if rng.gen_bool(0.3) {
            f64::INFINITY
        } else {
            rng.gen_range(0.05..4.0)
        };
        let reg = Regularizer::new(lambda, clip).unwrap();
        let a: f64 = rng.gen_range(-5.0..5.0);
        let b: f64 = rng.gen_range(-5.0..5.0);
        let gap = (reg.prox_scalar(a, mu) - reg.prox_scalar(b, mu)).abs();
        worst_expansion = worst_expansion.max(gap - (a - b).abs());
    }
    let detail = format!(
        "worst argmin gap {worst_arg:.2e} (budget 1e-3), worst expansion excess {worst_expansion:.2e} over 1000 cases each"
    );
    let outcome = if worst_arg <= 1e-3 && worst_expansion <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    };
    verdict(11, name, outcome)
}

/// Every analytic block gradient must match central finite differences of
/// the loss value on randomized logistic instances.
fn criterion_12() -> Verdict {
    let name = "block gradients match finite differences";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_12);
    let mut worst = 0.0_f64;
    for t in 0..100u64 {
        let spec = SyntheticSpec {
            workers: 1 + (t % 2) as usize,
            blocks: 2 + (t % 3) as usize,
            block_width: 2 + (t % 4) as usize,
            samples: 10 + (t as usize * 7) % 31,
            density: 0.6,
            noise: 0.3,
            kind: LossKind::Logistic,
            seed: 1000 + t,
        };
        let d = generate(&spec).unwrap();
        let problem = match ProblemInstance::from_shards(
            LossKind::Logistic,
            d.shards,
            d.block_map,
            Regularizer::new(0.01, 1e4).unwrap(),
        ) {
            Ok(p) => p,
            Err(e) => return verdict(12, name, Err(format!("instance {t} rejected: {e}"))),
        };
        let dim = problem.block_map.total_dim();
        let model: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = 1e-6;
        for (i, j) in problem.topology.edges() {
            let oracle = &problem.oracles[i.0];
            let analytic = oracle.block_gradient_at(|g| model[g as usize], j);
            let coords: Vec<usize> = (0..dim)
                .filter(|&g| problem.block_map.locate(g).0 == j)
                .collect();
            for (k, &g) in coords.iter().enumerate() {
                let up = oracle
                    .loss_value_at(|gg| model[gg as usize] + if gg as usize == g { h } else { 0.0 });
                let down = oracle
                    .loss_value_at(|gg| model[gg as usize] - if gg as usize == g { h } else { 0.0 });
                let fd = (up - down) / (2.0 * h);
                let an = analytic.values[k];
                let rel = (fd - an).abs() / f64::max(1e-3, an.abs().max(fd.abs()));
                worst = worst.max(rel);
            }
        }
    }
    let detail =
        format!("worst relative gap {worst:.2e} (budget 1e-5) over 100 random logistic instances");
    let outcome = if worst <= 1e-5 { Ok(detail) } else { Err(detail) };
    verdict(12, name, outcome)
}
