//! Command-line experiment runner.
//!
//! Three subcommands: `run` executes a configured solve and leaves its
//! artifacts in a directory, `generate` writes a synthetic dataset to disk,
//! and `compare` diffs the summaries of two finished experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 run failure
//! (objective divergence or a staleness kill; artifacts are still written),
//! 3 I/O error. Configuration and file-format errors carry `path:line`
//! prefixes where a line is known.
//!
//! In sync and async-sim modes every emitted file is a pure function of the
//! problem spec and the seed; rerunning the same invocation reproduces the
//! bytes exactly. The threaded mode is nondeterministic by nature and only
//! its summary carries a real wall-clock figure.
//!
//! # Config files
//!
//! `run --config FILE` reads run parameters from a plain-text file and then
//! applies any explicit flags on top. `#` starts a comment, blank lines are
//! skipped, and each line in the top section is `key = value`:
//!
//! ```text
//! mode         = async-sim       # sync | async-sim | async-threads
//! rho          = 100             # global penalty
//! rho_worker 2 = 50              # per-worker override
//! rho_edge 2 3 = 75              # per-edge override
//! gamma        = 0.01
//! lambda       = 0
//! clip         = 1e4             # box half-width, `inf` to disable
//! delay_bound  = 0               # staleness cap for async-sim
//! delay_edge 2 3 = 5             # per-edge cap
//! delay_dist   = uniform         # uniform | fixed:<t> | adversarial
//! filter       = off             # off | const:<c> | decay:<c>
//! delta_push   = false
//! block_order  = uniform         # uniform | cyclic
//! seed         = 0
//! max_epochs   = 1000
//! tolerance    = 1e-3            # stationarity target for T(eps) reporting
//! metric_every = 100             # 0 disables the diagnostic series
//! log_events   = true
//! staleness_kill = 8             # optional abort threshold (threads mode)
//! f_lower      = 0               # loss lower bound for the condition report
//! workers      = 2
//! ```
//!
//! Two optional sections declare the expected topology. Block ids must be
//! dense from 0; edges are `worker block` pairs:
//!
//! ```text
//! [blocks]
//! 0 = 5          # block id = dimension
//! 1 = 5
//!
//! [edges]
//! 0 0
//! 0 1
//! 1 1
//! ```
//!
//! The runner always derives the live topology from the data (worker i
//! neighbors block j exactly when shard i touches a coordinate of block j),
//! so a declared topology acts as a cross-check: a mismatch is a
//! configuration error, not a way to force a different wiring.

mod compare;
mod dataset;
mod experiment;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use badmm_core::config::{BlockOrder, DelayKind, FilterSchedule, Mode};
use badmm_core::problems::LossKind;
use badmm_core::Error;

#[derive(Parser)]
#[command(
    name = "badmm",
    version,
    about = "Block-wise asynchronous consensus ADMM runner",
    after_help = "Exit codes: 0 success, 1 usage/config error, 2 run failure, 3 I/O error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts to a directory.
    ///
    /// Artifacts: trajectory_<seed>.csv and checkpoint_<seed>.json per
    /// repetition, conditions.json (step-size condition report), and
    /// summary.json. With --repetitions N the run repeats with seeds
    /// seed, seed+1, ..., seed+N-1.
    Run(RunArgs),
    /// Write a synthetic dataset (LIBSVM text) plus its planted model.
    Generate(GenerateArgs),
    /// Diff the summary.json files of two finished experiments.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Output directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Config file applied before any flags (see the long help for the
    /// grammar).
    #[arg(long)]
    config: Option<PathBuf>,

    /// LIBSVM dataset (.gz accepted). Without it a synthetic instance is
    /// generated from the shape flags below.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Transport: sync, async-sim, or async-threads.
    #[arg(long)]
    mode: Option<Mode>,

    /// Penalty constant; replaces every per-worker/per-edge override.
    #[arg(long)]
    rho: Option<f64>,

    /// Proximal damping on the block servers.
    #[arg(long)]
    gamma: Option<f64>,

    /// L1 weight of the shared regularizer.
    #[arg(long)]
    lambda: Option<f64>,

    /// Box half-width on every consensus coordinate; `inf` disables it.
    #[arg(long)]
    clip: Option<f64>,

    /// Staleness cap for the delay-injecting simulator; replaces per-edge
    /// overrides.
    #[arg(long)]
    delay_bound: Option<u64>,

    /// Delay distribution: uniform, fixed:<t>, or adversarial.
    #[arg(long)]
    delay_dist: Option<DelayKind>,

    /// Significance filter: off, const:<c>, or decay:<c>.
    #[arg(long)]
    filter: Option<FilterSchedule>,

    /// Send per-edge deltas instead of full payloads.
    #[arg(long)]
    delta_push: bool,

    /// Block selection per worker epoch: uniform or cyclic.
    #[arg(long)]
    block_order: Option<BlockOrder>,

    /// Base seed; repetitions use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,

    /// Per-worker epoch budget (full sweeps per worker in sync mode).
    #[arg(long)]
    max_epochs: Option<u64>,

    /// Stationarity target for the T(eps) table in the summary.
    #[arg(long)]
    tolerance: Option<f64>,

    /// Metric sampling cadence in events; 0 turns the diagnostic series
    /// (commit rows included) off entirely.
    #[arg(long)]
    metric_every: Option<u64>,

    /// Abort when an observed staleness exceeds this (threads mode).
    #[arg(long)]
    staleness_kill: Option<u64>,

    /// Drop per-event trajectory rows, keeping only metric rows.
    #[arg(long)]
    no_log_events: bool,

    /// Number of repetitions over the seed ladder.
    #[arg(long, default_value_t = 1)]
    repetitions: usize,

    /// Worker (data shard) count.
    #[arg(long)]
    workers: Option<usize>,

    /// Synthetic only: number of parameter blocks.
    #[arg(long)]
    blocks: Option<usize>,

    /// Coordinates per block (with --data: contiguous layout width).
    #[arg(long)]
    block_width: Option<usize>,

    /// Synthetic only: total sample count.
    #[arg(long)]
    samples: Option<usize>,

    /// Synthetic only: per-coordinate activity probability in (0, 1].
    #[arg(long)]
    density: Option<f64>,

    /// Synthetic only: label noise scale.
    #[arg(long)]
    noise: Option<f64>,

    /// Loss: least-squares or logistic.
    #[arg(long)]
    loss: Option<LossKind>,

    /// Synthetic only: generator seed, independent of the run seed.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for data.libsvm and model.json.
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 2)]
    workers: usize,

    #[arg(long, default_value_t = 4)]
    blocks: usize,

    #[arg(long, default_value_t = 5)]
    block_width: usize,

    #[arg(long, default_value_t = 50)]
    samples: usize,

    /// Per-coordinate activity probability in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    density: f64,

    /// Label noise scale (Gaussian for least-squares, margin perturbation
    /// for logistic).
    #[arg(long, default_value_t = 0.25)]
    noise: f64,

    /// Loss the labels are generated for: least-squares or logistic.
    #[arg(long, default_value = "least-squares")]
    loss: LossKind,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory holding the first experiment's summary.json.
    a: PathBuf,

    /// Directory holding the second experiment's summary.json.
    b: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version requests print to stdout and succeed; real
            // usage errors render clap's message and exit 1.
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let outcome = match &cli.command {
        Command::Run(args) => experiment::run(args),
        Command::Generate(args) => dataset::run(args),
        Command::Compare(args) => compare::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("badmm: {e}");
            exit_code_for(&e)
        }
    }
}

/// Maps error classes onto the documented exit codes. Anything that is
/// neither environmental nor a run failure is a usage/configuration error.
fn exit_code_for(e: &Error) -> ExitCode {
    if e.is_io() {
        ExitCode::from(3)
    } else if e.is_run_failure() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}
