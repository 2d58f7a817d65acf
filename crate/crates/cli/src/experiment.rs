//! The `run` subcommand: problem assembly, execution, artifacts.
//!
//! A run failure (divergence or a staleness kill) does not abort the
//! experiment. The repetition's error is recorded, the longest finite
//! prefix of the run is recovered by bisecting the epoch budget, and its
//! state is saved in place of the missing final state; the process exits 2
//! after all repetitions and the summary are written. Bisection costs at
//! most log2(max_epochs) re-runs, each no longer than the original, and is
//! exact in the deterministic modes because equal seeds replay equal runs.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;

use badmm_core::checkpoint::Checkpoint;
use badmm_core::config::{load_config_file, ConfigFile, DelayTable, Mode, RhoTable, RunConfig};
use badmm_core::metrics::{
    check_theorem1, check_theorem2, kkt_residuals, stationarity_p, t_epsilon, TheoremParams,
};
use badmm_core::problems::libsvm::{load_libsvm, LabelPolicy};
use badmm_core::problems::synthetic::{generate, SyntheticSpec};
use badmm_core::problems::{LossKind, ProblemInstance, Regularizer};
use badmm_core::topology::Topology;
use badmm_core::transport::{run_async_sim, run_async_threads, run_sync, RunOutput};
use badmm_core::{Error, Result};

use crate::summary::{
    self, block_order_name, delay_dist_name, loss_name, Conditions, Kkt, RunRecord, Summary,
    TimeToAccuracy,
};
use crate::RunArgs;

/// Problem source parameters, resolved from flags with the synthetic
/// convex fixture as the default.
struct Shape {
    workers: usize,
    blocks: usize,
    block_width: usize,
    samples: usize,
    density: f64,
    noise: f64,
    loss: LossKind,
    data_seed: u64,
}

pub fn run(args: &RunArgs) -> Result<ExitCode> {
    let (config, declared) = resolve_config(args)?;
    let shape = resolve_shape(args)?;
    let problem = build_problem(args, &shape, &config)?;
    check_declared_topology(declared.as_ref(), &problem)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("creating {}", args.out.display()), e))?;

    // The condition reports depend only on the problem and the
    // configuration, never on a run, so they exist even when every
    // repetition diverges.
    let params = TheoremParams::from_problem(&problem, &config)?;
    let l0 = problem
        .objective(&vec![0.0; problem.topology.total_dim()])
        .unwrap_or(f64::INFINITY);
    let theorem1 = check_theorem1(&params, l0);
    let theorem2 = check_theorem2(&params, &config.filter);
    summary::write_json(
        &args.out.join("conditions.json"),
        &Conditions {
            schema: summary::SUMMARY_SCHEMA,
            params: &params,
            theorem1: &theorem1,
            theorem2: &theorem2,
        },
    )?;

    let mut runs = Vec::with_capacity(args.repetitions);
    let mut any_failed = false;
    for r in 0..args.repetitions {
        let seed = config.seed.checked_add(r as u64).ok_or_else(|| {
            Error::Config(format!("seed ladder overflows at repetition {r}"))
        })?;
        let record = run_repetition(&problem, &config, seed, &args.out)?;
        any_failed |= record.failed;
        runs.push(record);
    }

    let doc = Summary {
        schema: summary::SUMMARY_SCHEMA,
        mode: config.mode.to_string(),
        seed: config.seed,
        repetitions: args.repetitions,
        workers: problem.topology.num_workers(),
        blocks: problem.topology.num_blocks(),
        coordinates: problem.topology.total_dim(),
        edges: problem.topology.num_edges(),
        samples: problem.oracles.iter().map(|o| o.num_samples()).sum(),
        loss: loss_name(shape.loss).to_string(),
        rho: config.rho.default,
        gamma: config.gamma,
        lambda: config.lambda,
        clip: config.clip,
        delay_bound: config.delay.default,
        delay_dist: delay_dist_name(config.delay_kind),
        filter: config.filter.to_string(),
        delta_push: config.delta_push,
        block_order: block_order_name(config.block_order).to_string(),
        max_epochs: config.max_epochs,
        tolerance: config.tolerance,
        metric_every: config.metric_every,
        theorem1,
        theorem2,
        runs,
    };
    summary::write_json(&args.out.join("summary.json"), &doc)?;

    Ok(if any_failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

/// Config file first, explicit flags on top.
fn resolve_config(args: &RunArgs) -> Result<(RunConfig, Option<Topology>)> {
    let ConfigFile { mut run, topology } = match &args.config {
        Some(path) => load_config_file(path)?,
        None => ConfigFile {
            run: RunConfig::default(),
            topology: None,
        },
    };
    if let Some(v) = args.mode {
        run.mode = v;
    }
    if let Some(v) = args.rho {
        run.rho = RhoTable::uniform(v);
    }
    if let Some(v) = args.gamma {
        run.gamma = v;
    }
    if let Some(v) = args.lambda {
        run.lambda = v;
    }
    if let Some(v) = args.clip {
        run.clip = v;
    }
    if let Some(v) = args.delay_bound {
        run.delay = DelayTable::uniform(v);
    }
    if let Some(v) = args.delay_dist {
        run.delay_kind = v;
    }
    if let Some(v) = args.filter {
        run.filter = v;
    }
    if args.delta_push {
        run.delta_push = true;
    }
    if let Some(v) = args.block_order {
        run.block_order = v;
    }
    if let Some(v) = args.seed {
        run.seed = v;
    }
    if let Some(v) = args.max_epochs {
        run.max_epochs = v;
    }
    if let Some(v) = args.tolerance {
        run.tolerance = v;
    }
    if let Some(v) = args.metric_every {
        run.metric_every = v;
    }
    if let Some(v) = args.staleness_kill {
        run.staleness_kill = Some(v);
    }
    if args.no_log_events {
        run.log_events = false;
    }
    run.validate()?;
    if args.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    Ok((run, topology))
}

fn resolve_shape(args: &RunArgs) -> Result<Shape> {
    if args.data.is_some() {
        let synthetic_only = [
            ("--blocks", args.blocks.is_some()),
            ("--samples", args.samples.is_some()),
            ("--density", args.density.is_some()),
            ("--noise", args.noise.is_some()),
            ("--data-seed", args.data_seed.is_some()),
        ];
        for (flag, set) in synthetic_only {
            if set {
                return Err(Error::Config(format!(
                    "{flag} shapes the synthetic generator and cannot be combined with --data"
                )));
            }
        }
    }
    Ok(Shape {
        workers: args.workers.unwrap_or(2),
        blocks: args.blocks.unwrap_or(4),
        block_width: args.block_width.unwrap_or(5),
        samples: args.samples.unwrap_or(50),
        density: args.density.unwrap_or(0.5),
        noise: args.noise.unwrap_or(0.25),
        loss: args.loss.unwrap_or(LossKind::LeastSquares),
        data_seed: args.data_seed.unwrap_or(0),
    })
}

fn build_problem(args: &RunArgs, shape: &Shape, config: &RunConfig) -> Result<ProblemInstance> {
    let reg = Regularizer::new(config.lambda, config.clip)?;
    match &args.data {
        Some(path) => {
            let policy = match shape.loss {
                LossKind::Logistic => LabelPolicy::Classification,
                LossKind::LeastSquares => LabelPolicy::Regression,
            };
            let data = load_libsvm(path, shape.workers, shape.block_width, policy)?;
            ProblemInstance::from_shards(shape.loss, data.shards, data.block_map, reg)
        }
        None => {
            let data = generate(&SyntheticSpec {
                workers: shape.workers,
                blocks: shape.blocks,
                block_width: shape.block_width,
                samples: shape.samples,
                density: shape.density,
                noise: shape.noise,
                kind: shape.loss,
                seed: shape.data_seed,
            })?;
            ProblemInstance::from_shards(shape.loss, data.shards, data.block_map, reg)
        }
    }
}

/// A topology declared in the config file must agree with the one the data
/// induces; the first discrepancy is named in the error.
fn check_declared_topology(declared: Option<&Topology>, problem: &ProblemInstance) -> Result<()> {
    let Some(want) = declared else {
        return Ok(());
    };
    let got = problem.topology.as_ref();
    if want == got {
        return Ok(());
    }
    let detail = if want.num_workers() != got.num_workers() {
        format!(
            "declared {} workers, data induces {}",
            want.num_workers(),
            got.num_workers()
        )
    } else if want.block_dims() != got.block_dims() {
        format!(
            "declared block dimensions {:?}, data induces {:?}",
            want.block_dims(),
            got.block_dims()
        )
    } else {
        let missing = want
            .edges()
            .find(|&(i, j)| !got.contains_edge(i, j))
            .map(|(i, j)| format!("declared edge ({i}, {j}) absent from the data"));
        let extra = got
            .edges()
            .find(|&(i, j)| !want.contains_edge(i, j))
            .map(|(i, j)| format!("data edge ({i}, {j}) missing from the declaration"));
        missing.or(extra).unwrap_or_else(|| "edge sets differ".into())
    };
    Err(Error::Config(format!(
        "config file topology does not match the data: {detail}"
    )))
}

fn run_repetition(
    problem: &ProblemInstance,
    base: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord> {
    let config = RunConfig {
        seed,
        ..base.clone()
    };
    match execute(problem, &config) {
        Ok(out) => finish_record(problem, &config, out_dir, out, None, None),
        Err(err) if err.is_run_failure() => {
            eprintln!("badmm: seed {seed}: {err}");
            match recover(problem, &config)? {
                Some((out, epochs)) => {
                    eprintln!(
                        "badmm: seed {seed}: saved the state of the longest finite prefix ({epochs} epochs)"
                    );
                    finish_record(
                        problem,
                        &config,
                        out_dir,
                        out,
                        Some(err.to_string()),
                        Some(epochs),
                    )
                }
                None => {
                    eprintln!("badmm: seed {seed}: not even the initial point is finite; nothing to save");
                    Ok(RunRecord::unrecovered(seed, err.to_string()))
                }
            }
        }
        Err(err) => Err(err),
    }
}

/// One full solve, plus a finiteness guard for configurations whose
/// diagnostic series is off (with metrics on, the transports detect a
/// non-finite objective themselves).
fn execute(problem: &ProblemInstance, config: &RunConfig) -> Result<RunOutput> {
    let out = match config.mode {
        Mode::Sync => run_sync(problem, config)?,
        Mode::AsyncSim => run_async_sim(problem, config)?,
        Mode::AsyncThreads => run_async_threads(problem, config)?.0,
    };
    if !out.final_snapshot.objective.is_finite() {
        return Err(Error::Diverged { event: out.events });
    }
    Ok(out)
}

/// Largest epoch budget whose run completes with a finite objective, found
/// by bisection; None when even a zero-epoch run fails.
fn recover(problem: &ProblemInstance, config: &RunConfig) -> Result<Option<(RunOutput, u64)>> {
    let probe = |epochs: u64| -> Result<RunOutput> {
        execute(
            problem,
            &RunConfig {
                max_epochs: epochs,
                ..config.clone()
            },
        )
    };
    let mut best = match probe(0) {
        Ok(out) => (out, 0),
        Err(e) if e.is_run_failure() => return Ok(None),
        Err(e) => return Err(e),
    };
    let (mut good, mut bad) = (0u64, config.max_epochs);
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        match probe(mid) {
            Ok(out) => {
                good = mid;
                best = (out, mid);
            }
            Err(e) if e.is_run_failure() => bad = mid,
            Err(e) => return Err(e),
        }
    }
    Ok(Some(best))
}

/// Writes the trajectory and checkpoint, then scores the final state.
fn finish_record(
    problem: &ProblemInstance,
    config: &RunConfig,
    out_dir: &Path,
    out: RunOutput,
    error: Option<String>,
    recovered_epochs: Option<u64>,
) -> Result<RunRecord> {
    let trajectory_file = format!("trajectory_{}.csv", config.seed);
    let checkpoint_file = format!("checkpoint_{}.json", config.seed);

    let path = out_dir.join(&trajectory_file);
    let file = fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    out.trajectory.write_csv(BufWriter::new(file))?;

    let path = out_dir.join(&checkpoint_file);
    let file = fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Checkpoint::capture(&out.servers).write_json(BufWriter::new(file))?;

    let p = stationarity_p(&out.final_snapshot, problem, config);
    let (r1, r2, r3) = kkt_residuals(&out.final_snapshot, problem);
    let commit_ps: Vec<f64> = out
        .trajectory
        .commit_p_series()
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let t_eps = epsilons(config.tolerance)
        .into_iter()
        .map(|epsilon| TimeToAccuracy {
            epsilon,
            commits: t_epsilon(&commit_ps, epsilon).map(|pos| pos as u64 + 1),
        })
        .collect();

    Ok(RunRecord {
        seed: config.seed,
        failed: error.is_some(),
        error,
        recovered_epochs,
        final_objective: Some(out.final_snapshot.objective),
        final_stationarity: Some(p),
        kkt: Some(Kkt { r1, r2, r3 }),
        t_epsilon: t_eps,
        commits: out.servers.iter().map(|s| s.commit_count()).sum(),
        worker_steps: out.worker_steps,
        filtered_steps: out.filtered_steps,
        pushes_delivered: out.pushes_delivered,
        pulls_served: out.pulls_served,
        max_staleness: out.max_staleness,
        max_dual_residual: out.max_dual_residual,
        wall_seconds: out.wall_seconds,
        trajectory_file: Some(trajectory_file),
        checkpoint_file: Some(checkpoint_file),
    })
}

/// The standard reporting levels plus the configured tolerance, descending.
fn epsilons(tolerance: f64) -> Vec<f64> {
    let mut eps = vec![1e-1, 1e-2, 1e-3];
    if !eps.contains(&tolerance) {
        eps.push(tolerance);
    }
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite levels"));
    eps
}
