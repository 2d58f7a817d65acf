//! Convergence diagnostics: the augmented Lagrangian, the stationarity
//! metric, KKT residuals, step-size condition checkers, and time-to-accuracy
//! extraction. Everything here is a pure function of an immutable
//! [`Snapshot`]; nothing mutates solver state.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::block::BlockVector;
use crate::config::{DelayTable, FilterSchedule, RhoTable, RunConfig};
use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::server::ServerState;
use crate::topology::{BlockId, WorkerId};
use crate::worker::WorkerState;

/// A complete view of solver state at one instant: every local copy and
/// multiplier over the edge set plus every committed consensus block.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Event or epoch label the snapshot was taken at.
    pub label: u64,
    /// Wall-clock nanoseconds; 0 in simulated transports.
    pub wall_ns: u64,
    /// Objective at the consensus point: total loss plus regularizer.
    pub objective: f64,
    /// Committed consensus blocks, indexed by block id.
    pub z: Vec<BlockVector>,
    pub x: BTreeMap<(WorkerId, BlockId), BlockVector>,
    pub y: BTreeMap<(WorkerId, BlockId), BlockVector>,
}

impl Snapshot {
    /// Builds a snapshot from raw parts, checking completeness over the
    /// edge set and computing the objective.
    pub fn from_parts(
        label: u64,
        wall_ns: u64,
        z: Vec<BlockVector>,
        x: BTreeMap<(WorkerId, BlockId), BlockVector>,
        y: BTreeMap<(WorkerId, BlockId), BlockVector>,
        problem: &ProblemInstance,
    ) -> Result<Self> {
        for (i, j) in problem.topology.edges() {
            if !x.contains_key(&(i, j)) || !y.contains_key(&(i, j)) {
                return Err(Error::IncompleteSnapshot {
                    worker: i,
                    block: j,
                });
            }
        }
        let flat = flatten(&z, problem);
        let objective = problem.objective(&flat)?;
        Ok(Snapshot {
            label,
            wall_ns,
            objective,
            z,
            x,
            y,
        })
    }

    /// Assembles a snapshot directly from live worker and server state.
    pub fn assemble(
        label: u64,
        wall_ns: u64,
        workers: &[WorkerState],
        servers: &[ServerState],
        problem: &ProblemInstance,
    ) -> Result<Self> {
        let z = servers.iter().map(|s| s.z().clone()).collect();
        let mut x = BTreeMap::new();
        let mut y = BTreeMap::new();
        for w in workers {
            for &j in w.neighbors() {
                x.insert((w.id(), j), w.x(j).clone());
                y.insert((w.id(), j), w.y(j).clone());
            }
        }
        Snapshot::from_parts(label, wall_ns, z, x, y, problem)
    }

    /// The consensus point as one flat vector in coordinate order.
    pub fn flat_z(&self, problem: &ProblemInstance) -> Vec<f64> {
        flatten(&self.z, problem)
    }
}

fn flatten(z: &[BlockVector], problem: &ProblemInstance) -> Vec<f64> {
    let mut flat = vec![0.0; problem.block_map.total_dim()];
    for b in z {
        problem.block_map.scatter(b, &mut flat);
    }
    flat
}

/// Reads one coordinate of worker i's local point: coordinate g lives in
/// some block j, and the worker's copy of it is x[(i, j)].
fn local_coord(x: &BTreeMap<(WorkerId, BlockId), BlockVector>, problem: &ProblemInstance, i: WorkerId, g: u32) -> f64 {
    let (j, off) = problem.block_map.locate(g as usize);
    x[&(i, j)].values[off]
}

/// The augmented Lagrangian
/// `sum_i f_i(x_i) + h(z) + sum_E [ <y, x - z> + rho/2 ||x - z||^2 ]`.
pub fn augmented_lagrangian(snapshot: &Snapshot, problem: &ProblemInstance, rho: &RhoTable) -> f64 {
    let mut total = 0.0;
    for (i, oracle) in problem.oracles.iter().enumerate() {
        total += oracle.loss_value_at(|g| local_coord(&snapshot.x, problem, WorkerId(i), g));
    }
    for b in &snapshot.z {
        total += problem.regularizer.value(&b.values);
    }
    for (i, j) in problem.topology.edges() {
        let r = rho.edge(i, j);
        let x = &snapshot.x[&(i, j)];
        let y = &snapshot.y[&(i, j)];
        let z = &snapshot.z[j.0];
        for k in 0..x.values.len() {
            let gap = x.values[k] - z.values[k];
            total += y.values[k] * gap + 0.5 * r * gap * gap;
        }
    }
    total
}

/// The stationarity metric
/// `P = ||z - zhat||^2 + sum_E ||grad_x L||^2 + sum_E ||x - z||^2`
/// with `grad_x L = grad_j f_i(x_i) + y + rho (x - z)` and `zhat_j` the
/// unit-step prox of z_j plus the accumulated edge terms. P vanishes
/// exactly at KKT points.
pub fn stationarity_p(snapshot: &Snapshot, problem: &ProblemInstance, config: &RunConfig) -> f64 {
    let mut p = 0.0;

    // Per-edge accumulators for the zhat argument.
    let mut edge_sum: Vec<Vec<f64>> = snapshot
        .z
        .iter()
        .map(|b| vec![0.0; b.dim()])
        .collect();

    for (i, j) in problem.topology.edges() {
        let rho = config.rho.edge(i, j);
        let x = &snapshot.x[&(i, j)];
        let y = &snapshot.y[&(i, j)];
        let z = &snapshot.z[j.0];
        let grad = problem.oracles[i.0]
            .block_gradient_at(|g| local_coord(&snapshot.x, problem, i, g), j);
        for k in 0..x.values.len() {
            let gap = x.values[k] - z.values[k];
            let grad_x = grad.values[k] + y.values[k] + rho * gap;
            p += grad_x * grad_x + gap * gap;
            if config.zhat_regrouped {
                // Float-regrouped form of the same edge term:
                // -rho (z - x - y/rho) instead of y + rho (x - z).
                edge_sum[j.0][k] -= rho * (z.values[k] - x.values[k] - y.values[k] / rho);
            } else {
                edge_sum[j.0][k] += y.values[k] + rho * gap;
            }
        }
    }

    for (j, sums) in edge_sum.iter().enumerate() {
        let z = &snapshot.z[j];
        for k in 0..z.values.len() {
            let zhat = problem.regularizer.prox_scalar(z.values[k] + sums[k], 1.0);
            let d = z.values[k] - zhat;
            p += d * d;
        }
    }
    p
}

/// The three KKT residuals, each reported as the worst case over its index
/// set: gradient/multiplier cancellation per edge, multiplier-sum distance
/// to the regularizer's subdifferential per block, and the consensus gap
/// per edge. All three vanish simultaneously exactly when P does.
pub fn kkt_residuals(snapshot: &Snapshot, problem: &ProblemInstance) -> (f64, f64, f64) {
    let mut r1 = 0.0_f64;
    let mut r3 = 0.0_f64;
    let mut y_sum: Vec<Vec<f64>> = snapshot
        .z
        .iter()
        .map(|b| vec![0.0; b.dim()])
        .collect();

    for (i, j) in problem.topology.edges() {
        let x = &snapshot.x[&(i, j)];
        let y = &snapshot.y[&(i, j)];
        let z = &snapshot.z[j.0];
        let grad = problem.oracles[i.0]
            .block_gradient_at(|g| local_coord(&snapshot.x, problem, i, g), j);
        let mut grad_sq = 0.0;
        let mut gap_sq = 0.0;
        for k in 0..x.values.len() {
            let c = grad.values[k] + y.values[k];
            grad_sq += c * c;
            let gap = x.values[k] - z.values[k];
            gap_sq += gap * gap;
            y_sum[j.0][k] += y.values[k];
        }
        r1 = r1.max(grad_sq.sqrt());
        r3 = r3.max(gap_sq.sqrt());
    }

    let mut r2 = 0.0_f64;
    for (j, sums) in y_sum.iter().enumerate() {
        r2 = r2.max(
            problem
                .regularizer
                .subgradient_distance(&snapshot.z[j].values, sums),
        );
    }
    (r1, r2, r3)
}

/// Inputs and derived quantities for the step-size conditions: per-edge
/// curvature estimates and delay bounds, the damping and penalty constants,
/// and the per-block / per-worker condition values computed from them.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremParams {
    pub gamma: f64,
    pub f_lower: f64,
    pub edges: Vec<EdgeParams>,
    /// Per-block condition value; positive means the block passes.
    pub alpha: Vec<BlockCondition>,
    /// Per-worker condition value; positive means the worker passes.
    pub beta: Vec<WorkerCondition>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeParams {
    pub worker: usize,
    pub block: usize,
    pub rho: f64,
    pub lipschitz: f64,
    pub delay_bound: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCondition {
    pub block: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkerCondition {
    pub worker: usize,
    pub value: f64,
}

impl TheoremParams {
    /// Computes the condition values from explicit per-edge inputs.
    pub fn new(
        problem: &ProblemInstance,
        gamma: f64,
        rho: &RhoTable,
        delay: &DelayTable,
        lipschitz: &BTreeMap<(WorkerId, BlockId), f64>,
        f_lower: f64,
    ) -> Result<Self> {
        let topology = &problem.topology;
        let mut edges = Vec::with_capacity(topology.num_edges());
        for (i, j) in topology.edges() {
            let l = *lipschitz
                .get(&(i, j))
                .ok_or(Error::IncompleteSnapshot { worker: i, block: j })?;
            edges.push(EdgeParams {
                worker: i.0,
                block: j.0,
                rho: rho.edge(i, j),
                lipschitz: l,
                delay_bound: delay.bound(i, j),
            });
        }

        // alpha_j = gamma + min_{i in N(j)} rho_i
        //           - sum_{i in N(j)} (1/2 + 1/rho_i) L_ij^2 (T_ij + 1)^2
        //           - sum_{i in N(j)} (4 L_ij + rho_i + 1) T_ij^2 / 2.
        // The leading penalty term takes the minimum over the block's
        // workers, the conservative reading.
        let mut alpha = Vec::with_capacity(topology.num_blocks());
        for j in topology.blocks() {
            let mut min_rho = f64::INFINITY;
            let mut subtract = 0.0;
            for &i in topology.block_neighbors(j) {
                let r = rho.edge(i, j);
                let l = lipschitz[&(i, j)];
                let t = delay.bound(i, j) as f64;
                min_rho = min_rho.min(r);
                subtract += (0.5 + 1.0 / r) * l * l * (t + 1.0) * (t + 1.0);
                subtract += (4.0 * l + r + 1.0) * t * t / 2.0;
            }
            alpha.push(BlockCondition {
                block: j.0,
                value: gamma + min_rho - subtract,
            });
        }

        // beta_i = (rho_i - 4 max_{j in N(i)} L_ij) / (2 |N(i)|).
        let mut beta = Vec::with_capacity(topology.num_workers());
        for i in topology.workers() {
            let neighbors = topology.worker_neighbors(i);
            let max_l = neighbors
                .iter()
                .map(|&j| lipschitz[&(i, j)])
                .fold(0.0_f64, f64::max);
            let min_rho = neighbors
                .iter()
                .map(|&j| rho.edge(i, j))
                .fold(f64::INFINITY, f64::min);
            beta.push(WorkerCondition {
                worker: i.0,
                value: (min_rho - 4.0 * max_l) / (2.0 * neighbors.len() as f64),
            });
        }

        Ok(TheoremParams {
            gamma,
            f_lower,
            edges,
            alpha,
            beta,
        })
    }

    /// Convenience constructor: estimates every edge curvature from the
    /// problem data (power iteration, relative tolerance 1e-3) and reads
    /// the rest from the run configuration.
    pub fn from_problem(problem: &ProblemInstance, config: &RunConfig) -> Result<Self> {
        let mut lipschitz = BTreeMap::new();
        for (i, j) in problem.topology.edges() {
            lipschitz.insert((i, j), problem.oracles[i.0].estimate_block_lipschitz(j, 1e-3));
        }
        TheoremParams::new(
            problem,
            config.gamma,
            &config.rho,
            &config.delay,
            &lipschitz,
            config.f_lower,
        )
    }
}

/// Outcome of the descent step-size check: the per-block and per-worker
/// condition values, any violations, and the smallest damping that would
/// repair each failing block.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub pass: bool,
    pub alpha: Vec<BlockCondition>,
    pub beta: Vec<WorkerCondition>,
    pub initial_gap: f64,
    pub violations: Vec<String>,
    /// Smallest gamma that makes every block condition positive, when some
    /// block currently fails. Repairing beta requires raising rho instead.
    pub suggested_gamma: Option<f64>,
}

/// Checks the descent conditions: every block value positive, every worker
/// value positive, and a finite nonnegative initial objective gap
/// `l0 - f_lower`.
pub fn check_theorem1(params: &TheoremParams, l0: f64) -> Theorem1Report {
    let mut violations = Vec::new();
    let mut worst_alpha_deficit: Option<f64> = None;
    for a in &params.alpha {
        if !(a.value > 0.0) {
            violations.push(format!("alpha[{}] = {:.6} <= 0", a.block, a.value));
            let deficit = params.gamma - a.value;
            worst_alpha_deficit = Some(worst_alpha_deficit.map_or(deficit, |d| d.max(deficit)));
        }
    }
    for b in &params.beta {
        if !(b.value > 0.0) {
            violations.push(format!("beta[{}] = {:.6} <= 0", b.worker, b.value));
        }
    }
    let initial_gap = l0 - params.f_lower;
    if !(initial_gap.is_finite() && initial_gap >= 0.0) {
        violations.push(format!(
            "initial objective gap {initial_gap:.6} must be finite and nonnegative"
        ));
    }
    Theorem1Report {
        pass: violations.is_empty(),
        alpha: params.alpha.clone(),
        beta: params.beta.clone(),
        initial_gap,
        violations,
        suggested_gamma: worst_alpha_deficit,
    }
}

/// Per-edge outcome of the filtered-communication step-size check.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeCondition {
    pub worker: usize,
    pub block: usize,
    pub alpha_prime: f64,
    pub beta_prime: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Report {
    pub pass: bool,
    /// Threshold value the conditions were evaluated at: the schedule's
    /// worst (largest) value, reached on the first epoch.
    pub delta_max: f64,
    pub edges: Vec<EdgeCondition>,
}

/// Checks the step-size conditions under a significance filter, evaluated
/// at the schedule's largest threshold:
///
/// ```text
/// alpha' = (rho + gamma - delta)/2 - (7L/(2 rho^2) + 1/rho) L^2 (T+1)^2 - T^2/2 > 0
/// beta'  = rho/4 - 3L > 0
/// ```
///
/// both per edge. With the filter off this reduces to an unfiltered variant
/// of the descent condition (the constants differ from `check_theorem1`).
pub fn check_theorem2(params: &TheoremParams, filter: &FilterSchedule) -> Theorem2Report {
    let delta_max = filter.max_threshold();
    let mut edges = Vec::with_capacity(params.edges.len());
    let mut pass = true;
    for e in &params.edges {
        let l = e.lipschitz;
        let t = e.delay_bound as f64;
        let alpha_prime = (e.rho + params.gamma - delta_max) / 2.0
            - (7.0 * l / (2.0 * e.rho * e.rho) + 1.0 / e.rho) * l * l * (t + 1.0) * (t + 1.0)
            - t * t / 2.0;
        let beta_prime = e.rho / 4.0 - 3.0 * l;
        let edge_pass = alpha_prime > 0.0 && beta_prime > 0.0;
        pass &= edge_pass;
        edges.push(EdgeCondition {
            worker: e.worker,
            block: e.block,
            alpha_prime,
            beta_prime,
            pass: edge_pass,
        });
    }
    Theorem2Report {
        pass,
        delta_max,
        edges,
    }
}

/// First index whose sampled stationarity value is at or below `epsilon`.
pub fn t_epsilon(p_samples: &[f64], epsilon: f64) -> Option<usize> {
    p_samples.iter().position(|&p| p <= epsilon)
}
