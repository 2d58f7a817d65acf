//! The message layer binding workers to block servers.
//!
//! Three interchangeable transports run the same worker/server state
//! machines: a synchronous barrier loop, a deterministic single-threaded
//! event simulation with bounded-delay injection, and a real multi-threaded
//! channel mode. This module holds what they share: the delay model, the
//! per-block version history that serves lagged pulls, and the run output
//! type.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::BlockVector;
use crate::config::{DelayKind, DelayTable, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::Snapshot;
use crate::problems::ProblemInstance;
use crate::server::ServerState;
use crate::topology::{BlockId, WorkerId};
use crate::trajectory::Trajectory;
use crate::worker::{derive_stream_seed, WorkerState};

pub mod sim;
pub mod sync;
pub mod threads;

pub use sim::{run_async_sim, run_async_sim_barrier, SimEngine, SimSchedule};
pub use sync::run_sync;
pub use threads::{replay_events, run_async_threads, ThreadEvent, ThreadEventKind};

/// Draws injected staleness values, always within the per-edge bound.
#[derive(Debug, Clone)]
pub struct DelayModel {
    table: DelayTable,
    kind: DelayKind,
    rng: ChaCha8Rng,
}

impl DelayModel {
    /// `label` keys an independent RNG stream off the run seed, so the
    /// lag draws never interact with worker or schedule draws.
    pub fn new(config: &RunConfig, label: &str) -> Self {
        DelayModel {
            table: config.delay.clone(),
            kind: config.delay_kind,
            rng: ChaCha8Rng::seed_from_u64(derive_stream_seed(config.seed, label, 0)),
        }
    }

    pub fn bound(&self, i: WorkerId, j: BlockId) -> u64 {
        self.table.bound(i, j)
    }

    /// One staleness draw for edge (i, j), guaranteed within the bound.
    pub fn draw(&mut self, i: WorkerId, j: BlockId) -> u64 {
        let bound = self.table.bound(i, j);
        let tau = match self.kind {
            DelayKind::Uniform => {
                if bound == 0 {
                    0
                } else {
                    self.rng.gen_range(0..=bound)
                }
            }
            DelayKind::Fixed(tau) => tau.min(bound),
            DelayKind::AdversarialMax => bound,
        };
        debug_assert!(tau <= bound);
        tau
    }
}

/// Ring buffer of recent consensus versions for one block. Depth is the
/// largest delay bound plus one, the minimum that lets every admissible lag
/// be served.
#[derive(Debug, Clone)]
pub struct VersionHistory {
    block: BlockId,
    capacity: usize,
    entries: VecDeque<(u64, BlockVector)>,
}

impl VersionHistory {
    pub fn new(block: BlockId, capacity: usize, initial: BlockVector) -> Self {
        let mut entries = VecDeque::with_capacity(capacity.max(1));
        entries.push_back((0, initial));
        VersionHistory {
            block,
            capacity: capacity.max(1),
            entries,
        }
    }

    pub fn record(&mut self, version: u64, value: BlockVector) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((version, value));
    }

    pub fn latest_version(&self) -> u64 {
        self.entries.back().expect("history never empty").0
    }

    /// The value `lag` versions behind the newest. Early in a run, when
    /// fewer versions exist than the lag asks for, the oldest recorded
    /// version is served instead; the returned lag reflects that. A lag the
    /// ring could never hold is a configuration error.
    pub fn fetch_lagged(&self, lag: u64) -> Result<(&BlockVector, u64, u64)> {
        let needed = lag as usize + 1;
        if needed > self.capacity {
            return Err(Error::HistoryUnderflow {
                block: self.block,
                capacity: self.capacity,
                needed,
            });
        }
        let applied = (lag as usize).min(self.entries.len() - 1);
        let (version, value) = &self.entries[self.entries.len() - 1 - applied];
        Ok((value, *version, applied as u64))
    }
}

/// A served pull: the (possibly lagged) consensus value, the version it
/// corresponds to, and the lag actually applied.
#[derive(Debug, Clone)]
pub struct ServedPull {
    pub value: BlockVector,
    pub version: u64,
    pub staleness: u64,
}

/// Serves one pull on edge (i, j): draws a lag from the delay model and
/// reads that far back in the block's version history.
pub fn deliver_pull(
    model: &mut DelayModel,
    history: &VersionHistory,
    i: WorkerId,
    j: BlockId,
) -> Result<ServedPull> {
    let lag = model.draw(i, j);
    let (value, version, applied) = history.fetch_lagged(lag)?;
    debug_assert!(
        applied <= model.bound(i, j),
        "served staleness {applied} exceeds the bound on edge ({i}, {j})"
    );
    Ok(ServedPull {
        value: value.clone(),
        version,
        staleness: applied,
    })
}

/// Everything a run leaves behind: final worker and server state, the
/// trajectory, a final snapshot, and transport counters.
#[derive(Debug)]
pub struct RunOutput {
    pub workers: Vec<WorkerState>,
    pub servers: Vec<ServerState>,
    pub trajectory: Trajectory,
    pub final_snapshot: Snapshot,
    /// Total events processed (steps, deliveries, commits, samples).
    pub events: u64,
    pub worker_steps: u64,
    /// Steps whose push the significance filter suppressed.
    pub filtered_steps: u64,
    pub pushes_delivered: u64,
    pub pulls_served: u64,
    /// Largest staleness served (simulated lag or observed versions).
    pub max_staleness: u64,
    /// Largest post-update dual identity residual seen on any step: the
    /// multiplier update closes each epoch with y = -grad f at the cache,
    /// and this records how far any epoch strayed from that identity.
    pub max_dual_residual: f64,
    /// Wall-clock duration; meaningful in thread mode only.
    pub wall_seconds: f64,
}

impl RunOutput {
    /// The committed consensus point as one flat vector.
    pub fn final_z(&self, problem: &ProblemInstance) -> Vec<f64> {
        self.final_snapshot.flat_z(problem)
    }

    /// Fraction of worker steps whose push was suppressed.
    pub fn filtered_fraction(&self) -> f64 {
        if self.worker_steps == 0 {
            0.0
        } else {
            self.filtered_steps as f64 / self.worker_steps as f64
        }
    }
}

/// Event bookkeeping shared by the deterministic engines: assigns dense
/// event indices, appends trajectory rows, and interleaves metric samples
/// at commits and on the configured cadence.
pub(crate) struct Recorder<'a> {
    problem: &'a ProblemInstance,
    config: &'a RunConfig,
    pub trajectory: Trajectory,
    pub event: u64,
    pub steps: u64,
    pub filtered: u64,
    pub pushes: u64,
    pub pulls: u64,
    pub max_staleness: u64,
    pub max_dual_residual: f64,
    since_sample: u64,
}

impl<'a> Recorder<'a> {
    pub fn new(problem: &'a ProblemInstance, config: &'a RunConfig) -> Self {
        Recorder {
            problem,
            config,
            trajectory: Trajectory::new(),
            event: 0,
            steps: 0,
            filtered: 0,
            pushes: 0,
            pulls: 0,
            max_staleness: 0,
            max_dual_residual: 0.0,
            since_sample: 0,
        }
    }

    /// Folds one epoch report into the step counters.
    pub fn count_step(&mut self, report: &crate::worker::EpochReport) {
        self.steps += 1;
        if report.filtered {
            self.filtered += 1;
        }
        self.max_dual_residual = self.max_dual_residual.max(report.dual_residual_inf);
    }

    /// Appends a plain transport event. Returns its index.
    pub fn emit(
        &mut self,
        kind: crate::trajectory::EventKind,
        epoch: u64,
        worker: Option<usize>,
        block: Option<usize>,
        staleness: Option<u64>,
    ) -> u64 {
        let idx = self.event;
        self.event += 1;
        self.since_sample += 1;
        if let Some(s) = staleness {
            self.max_staleness = self.max_staleness.max(s);
        }
        if self.config.log_events {
            self.trajectory.push(crate::trajectory::EventRecord {
                event: idx,
                epoch,
                worker,
                block,
                kind,
                staleness,
                objective: None,
                stationarity: None,
            });
        }
        idx
    }

    /// Appends a metric-carrying row (a commit or a cadence sample)
    /// evaluated on the current worker/server state. A zero metric cadence
    /// turns the whole diagnostic series off, commits included.
    pub fn sample(
        &mut self,
        kind: crate::trajectory::EventKind,
        epoch: u64,
        block: Option<usize>,
        workers: &[WorkerState],
        servers: &[ServerState],
    ) -> Result<()> {
        if self.config.metric_every == 0 {
            return Ok(());
        }
        let snap = Snapshot::assemble(self.event, 0, workers, servers, self.problem)?;
        if !snap.objective.is_finite() {
            return Err(Error::Diverged { event: self.event });
        }
        let p = crate::metrics::stationarity_p(&snap, self.problem, self.config);
        self.trajectory.push(crate::trajectory::EventRecord {
            event: self.event,
            epoch,
            worker: None,
            block,
            kind,
            staleness: None,
            objective: Some(snap.objective),
            stationarity: Some(p),
        });
        self.event += 1;
        Ok(())
    }

    /// Emits a cadence sample when enough events have passed since the
    /// last metric row.
    pub fn maybe_sample(
        &mut self,
        tick: u64,
        workers: &[WorkerState],
        servers: &[ServerState],
    ) -> Result<()> {
        if self.config.metric_every != 0 && self.since_sample >= self.config.metric_every {
            self.since_sample = 0;
            self.sample(crate::trajectory::EventKind::Sample, tick, None, workers, servers)?;
        }
        Ok(())
    }

    /// Final snapshot plus counter rollup.
    pub fn finish(
        self,
        workers: Vec<WorkerState>,
        servers: Vec<ServerState>,
        wall_seconds: f64,
    ) -> Result<RunOutput> {
        let final_snapshot =
            Snapshot::assemble(self.event, 0, &workers, &servers, self.problem)?;
        Ok(RunOutput {
            workers,
            servers,
            trajectory: self.trajectory,
            final_snapshot,
            events: self.event,
            worker_steps: self.steps,
            filtered_steps: self.filtered,
            pushes_delivered: self.pushes,
            pulls_served: self.pulls,
            max_staleness: self.max_staleness,
            max_dual_residual: self.max_dual_residual,
            wall_seconds,
        })
    }
}

/// Builds fresh worker and server state for a run: consensus blocks at
/// zero, worker copies initialized from them.
pub(crate) fn build_states(
    problem: &ProblemInstance,
    config: &RunConfig,
) -> Result<(Vec<WorkerState>, Vec<ServerState>)> {
    let topology = &problem.topology;
    let mut servers = Vec::with_capacity(topology.num_blocks());
    for j in topology.blocks() {
        servers.push(ServerState::new(j, topology, config, problem.regularizer, None)?);
    }
    let mut workers = Vec::with_capacity(topology.num_workers());
    for i in topology.workers() {
        workers.push(WorkerState::new(i, topology, config, |j| {
            servers[j.0].serve_pull().0
        })?);
    }
    Ok((workers, servers))
}
