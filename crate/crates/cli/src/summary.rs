//! Summary and condition-report documents.
//!
//! `summary.json` (schema 1) is the machine-readable result of one
//! experiment: a flat echo of the effective configuration, the step-size
//! condition reports, and one record per repetition. `conditions.json`
//! repeats the condition reports together with the per-edge inputs they
//! were computed from, for runs whose summary is consumed by tooling that
//! only wants the verdicts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use badmm_core::config::BlockOrder;
use badmm_core::config::DelayKind;
use badmm_core::metrics::{TheoremParams, Theorem1Report, Theorem2Report};
use badmm_core::problems::LossKind;
use badmm_core::{Error, Result};

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Serialize)]
pub struct Summary {
    pub schema: u32,
    pub mode: String,
    pub seed: u64,
    pub repetitions: usize,
    pub workers: usize,
    pub blocks: usize,
    pub coordinates: usize,
    pub edges: usize,
    pub samples: usize,
    pub loss: String,
    /// Global penalty default; per-worker/per-edge overrides, if any, live
    /// in the config file that produced the run.
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Box half-width; JSON null means unbounded.
    pub clip: f64,
    pub delay_bound: u64,
    pub delay_dist: String,
    pub filter: String,
    pub delta_push: bool,
    pub block_order: String,
    pub max_epochs: u64,
    pub tolerance: f64,
    pub metric_every: u64,
    /// Descent step-size condition report; present even when every
    /// repetition failed.
    pub theorem1: Theorem1Report,
    /// Filtered-communication step-size condition report.
    pub theorem2: Theorem2Report,
    pub runs: Vec<RunRecord>,
}

/// One repetition's outcome. On a run failure with a recoverable prefix the
/// metric fields describe the recovered state; when not even the initial
/// point is finite they are null and the counters stay zero.
#[derive(Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub failed: bool,
    /// The failure, verbatim, when `failed`.
    pub error: Option<String>,
    /// Epoch budget of the recovered prefix when the full run failed.
    pub recovered_epochs: Option<u64>,
    pub final_objective: Option<f64>,
    pub final_stationarity: Option<f64>,
    pub kkt: Option<Kkt>,
    /// Commits needed to first reach each stationarity level; null when the
    /// run never got there (or the diagnostic series was off).
    pub t_epsilon: Vec<TimeToAccuracy>,
    pub commits: u64,
    pub worker_steps: u64,
    pub filtered_steps: u64,
    pub pushes_delivered: u64,
    pub pulls_served: u64,
    pub max_staleness: u64,
    pub max_dual_residual: f64,
    /// Real seconds in async-threads mode; 0 in the deterministic modes so
    /// their files stay reproducible.
    pub wall_seconds: f64,
    pub trajectory_file: Option<String>,
    pub checkpoint_file: Option<String>,
}

impl RunRecord {
    /// Record for a failure with no finite prefix at all.
    pub fn unrecovered(seed: u64, error: String) -> Self {
        RunRecord {
            seed,
            failed: true,
            error: Some(error),
            recovered_epochs: None,
            final_objective: None,
            final_stationarity: None,
            kkt: None,
            t_epsilon: Vec::new(),
            commits: 0,
            worker_steps: 0,
            filtered_steps: 0,
            pushes_delivered: 0,
            pulls_served: 0,
            max_staleness: 0,
            max_dual_residual: 0.0,
            wall_seconds: 0.0,
            trajectory_file: None,
            checkpoint_file: None,
        }
    }
}

/// Stationarity residuals of the final point: worst per-edge gradient
/// cancellation, worst per-block subgradient distance, worst per-edge
/// consensus gap.
#[derive(Serialize)]
pub struct Kkt {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

#[derive(Serialize)]
pub struct TimeToAccuracy {
    pub epsilon: f64,
    pub commits: Option<u64>,
}

#[derive(Serialize)]
pub struct Conditions<'a> {
    pub schema: u32,
    /// Per-edge curvature and delay inputs the conditions were evaluated on.
    pub params: &'a TheoremParams,
    pub theorem1: &'a Theorem1Report,
    pub theorem2: &'a Theorem2Report,
}

/// Pretty-printed JSON with a trailing newline, like every other JSON
/// artifact in the project.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::json(ctx(), e))?;
    out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    out.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Logistic => "logistic",
        LossKind::LeastSquares => "least-squares",
    }
}

pub fn block_order_name(order: BlockOrder) -> &'static str {
    match order {
        BlockOrder::UniformRandom => "uniform",
        BlockOrder::Cyclic => "cyclic",
    }
}

pub fn delay_dist_name(kind: DelayKind) -> String {
    match kind {
        DelayKind::Uniform => "uniform".into(),
        DelayKind::Fixed(tau) => format!("fixed:{tau}"),
        DelayKind::AdversarialMax => "adversarial".into(),
    }
}
