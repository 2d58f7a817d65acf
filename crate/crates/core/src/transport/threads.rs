//! Real multi-threaded transport.
//!
//! One thread per worker, one per block server. Pushes travel over
//! bounded per-block channels (FIFO per sender); pulls read a shared
//! per-block snapshot guarded by a reader/writer lock, so they never wait
//! on the server thread. Staleness is whatever the scheduler produces: it
//! is measured (and optionally bounded by a kill switch), not injected.
//!
//! The channel bound is load-bearing, not a tuning knob. A worker that
//! outruns its servers blocks on the full channel until they drain it, so
//! no worker can complete unboundedly many epochs against a consensus
//! state nobody is updating. Without it, an oversubscribed or single-core
//! host can run each thread to completion back to back, which quietly
//! turns the algorithm into isolated per-worker descent against the
//! initial point. Servers never send, so blocked senders cannot deadlock:
//! a server always drains its queue when scheduled, and on shutdown drops
//! the receiver, which unblocks any waiting sender with a disconnect.
//!
//! Every state transition takes a ticket from one global atomic counter.
//! Push applications and pulls draw theirs while holding the block's lock,
//! so for any one block the ticket order equals the order in which the
//! lock was held; worker-local computes draw theirs lock-free, which still
//! orders them against that worker's own pulls. Those two orders are all
//! the algorithm's data flow depends on, so re-executing the recorded
//! events in ticket order on fresh state reproduces the run exactly.
//! [`replay_events`] does that and cross-checks every recorded version.
//!
//! Trajectories from this mode carry event rows plus one final metric
//! sample; the per-commit diagnostic series is the deterministic modes'
//! job.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver, Sender};
use parking_lot::RwLock;

use crate::block::BlockVector;
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::message::Message;
use crate::metrics::{stationarity_p, Snapshot};
use crate::problems::{LossOracle, ProblemInstance};
use crate::server::ServerState;
use crate::topology::{BlockId, WorkerId};
use crate::trajectory::{EventKind, EventRecord, Trajectory};
use crate::transport::{build_states, RunOutput};
use crate::worker::WorkerState;

/// One recorded state transition, ordered by the global ticket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadEvent {
    pub stamp: u64,
    pub kind: ThreadEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThreadEventKind {
    /// A worker ran one epoch on `block`. `staleness` is the number of
    /// consensus versions the cached value lagged the published one.
    Compute {
        worker: WorkerId,
        epoch: u64,
        block: BlockId,
        filtered: bool,
        staleness: u64,
    },
    /// The block server applied a push from `worker`, producing `version`.
    PushDone {
        worker: WorkerId,
        block: BlockId,
        epoch: u64,
        version: u64,
    },
    /// A worker read the published snapshot of `block` at `version`.
    Pull {
        worker: WorkerId,
        block: BlockId,
        epoch: u64,
        version: u64,
    },
}

type WorkerYield = Result<(WorkerState, Vec<ThreadEvent>, f64)>;
type ServerYield = Result<(ServerState, Vec<ThreadEvent>)>;

#[allow(clippy::too_many_arguments)]
fn worker_main(
    mut state: WorkerState,
    oracle: &LossOracle,
    config: &RunConfig,
    tx: BTreeMap<usize, Sender<Message>>,
    snapshots: &[RwLock<(u64, BlockVector)>],
    published: &[AtomicU64],
    stamps: &AtomicU64,
    stop: &AtomicBool,
) -> WorkerYield {
    let mut log = Vec::new();
    let mut max_dual_residual = 0.0_f64;
    let worker = state.id();
    'epochs: for _ in 0..config.max_epochs {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stamp = stamps.fetch_add(1, Ordering::SeqCst);
        let outcome = match state.run_epoch(oracle, config) {
            Ok(outcome) => outcome,
            Err(e) => {
                stop.store(true, Ordering::SeqCst);
                return Err(e);
            }
        };
        max_dual_residual = max_dual_residual.max(outcome.report.dual_residual_inf);
        let j = outcome.report.block;
        let observed = published[j.0]
            .load(Ordering::SeqCst)
            .saturating_sub(state.cached(j).version);
        log.push(ThreadEvent {
            stamp,
            kind: ThreadEventKind::Compute {
                worker,
                epoch: outcome.report.epoch,
                block: j,
                filtered: outcome.report.filtered,
                staleness: observed,
            },
        });
        if let Some(kill) = config.staleness_kill {
            if observed > kill {
                stop.store(true, Ordering::SeqCst);
                return Err(Error::StalenessExceeded {
                    worker,
                    block: j,
                    observed,
                    threshold: kill,
                });
            }
        }
        if let Some(msg) = outcome.push {
            if tx[&j.0].send(msg).is_err() {
                // The server went away; the stop flag is already set.
                break 'epochs;
            }
            // Hand the core over once per push. When every thread shares
            // one core this approximates message-passing concurrency
            // instead of quantum-length sequential bursts; with idle cores
            // it returns immediately.
            std::thread::yield_now();
        }
        for jj in outcome.pull_requests {
            let (version, value) = {
                let guard = snapshots[jj.0].read();
                let stamp = stamps.fetch_add(1, Ordering::SeqCst);
                log.push(ThreadEvent {
                    stamp,
                    kind: ThreadEventKind::Pull {
                        worker,
                        block: jj,
                        epoch: state.epoch(),
                        version: guard.0,
                    },
                });
                (guard.0, guard.1.clone())
            };
            if let Err(e) = state.accept_pull(jj, value, version, 0) {
                stop.store(true, Ordering::SeqCst);
                return Err(e);
            }
        }
    }
    Ok((state, log, max_dual_residual))
}

fn server_main(
    mut state: ServerState,
    rx: Receiver<Message>,
    snapshot: &RwLock<(u64, BlockVector)>,
    published: &AtomicU64,
    stamps: &AtomicU64,
    stop: &AtomicBool,
) -> ServerYield {
    let mut log = Vec::new();
    let block = state.block();
    for msg in rx.iter() {
        let sender = msg.sender().expect("pushes carry a sender");
        let epoch = msg.epoch().unwrap_or(0);
        match state.receive_push(&msg) {
            Ok(effect) => {
                {
                    let mut guard = snapshot.write();
                    guard.0 = effect.version;
                    guard.1.values.clone_from(&state.z_dirty().values);
                    let stamp = stamps.fetch_add(1, Ordering::SeqCst);
                    log.push(ThreadEvent {
                        stamp,
                        kind: ThreadEventKind::PushDone {
                            worker: sender,
                            block,
                            epoch,
                            version: effect.version,
                        },
                    });
                }
                published.store(effect.version, Ordering::SeqCst);
            }
            Err(e) => {
                stop.store(true, Ordering::SeqCst);
                return Err(e);
            }
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
    }
    Ok((state, log))
}

fn join_unwrap<T>(handle: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    match handle.join() {
        Ok(inner) => inner,
        Err(_) => Err(Error::ThreadPanic),
    }
}

/// Runs the solver on real threads. Returns the run output together with
/// the merged event log, already in ticket order, ready for
/// [`replay_events`].
pub fn run_async_threads(
    problem: &ProblemInstance,
    config: &RunConfig,
) -> Result<(RunOutput, Vec<ThreadEvent>)> {
    config.validate()?;
    if config.mode != Mode::AsyncThreads {
        return Err(Error::Config(format!(
            "the threaded transport requires async-threads mode, got {}",
            config.mode
        )));
    }
    let (worker_states, server_states) = build_states(problem, config)?;
    let snapshots: Vec<RwLock<(u64, BlockVector)>> = server_states
        .iter()
        .map(|s| {
            let (value, version) = s.serve_pull();
            RwLock::new((version, value))
        })
        .collect();
    let published: Vec<AtomicU64> = server_states.iter().map(|_| AtomicU64::new(0)).collect();
    let stamps = AtomicU64::new(0);
    let stop = AtomicBool::new(false);

    let num_blocks = server_states.len();
    // Room for roughly two in-flight pushes per worker before senders
    // block; see the module docs for why the bound must exist at all.
    let capacity = (2 * worker_states.len()).max(4);
    let mut senders: Vec<Sender<Message>> = Vec::with_capacity(num_blocks);
    let mut receivers: Vec<Option<Receiver<Message>>> = Vec::with_capacity(num_blocks);
    for _ in 0..num_blocks {
        let (tx, rx) = bounded(capacity);
        senders.push(tx);
        receivers.push(Some(rx));
    }

    let start = Instant::now();
    let (worker_results, server_results) = std::thread::scope(|scope| {
        let snapshots = &snapshots;
        let published = &published;
        let stamps = &stamps;
        let stop = &stop;
        let worker_handles: Vec<_> = worker_states
            .into_iter()
            .enumerate()
            .map(|(i, state)| {
                let tx: BTreeMap<usize, Sender<Message>> = state
                    .neighbors()
                    .iter()
                    .map(|j| (j.0, senders[j.0].clone()))
                    .collect();
                let oracle = &problem.oracles[i];
                scope.spawn(move || {
                    worker_main(state, oracle, config, tx, snapshots, published, stamps, stop)
                })
            })
            .collect();
        let server_handles: Vec<_> = server_states
            .into_iter()
            .enumerate()
            .map(|(j, state)| {
                let rx = receivers[j].take().expect("one receiver per block");
                let snapshot = &snapshots[j];
                let version_out = &published[j];
                scope.spawn(move || server_main(state, rx, snapshot, version_out, stamps, stop))
            })
            .collect();
        // Servers exit once every sender is gone; release ours now that
        // each worker holds its own clones.
        drop(senders);
        let workers: Vec<WorkerYield> = worker_handles.into_iter().map(join_unwrap).collect();
        let servers: Vec<ServerYield> = server_handles.into_iter().map(join_unwrap).collect();
        (workers, servers)
    });
    let wall = start.elapsed();

    let mut workers = Vec::with_capacity(worker_results.len());
    let mut events: Vec<ThreadEvent> = Vec::new();
    let mut max_dual_residual = 0.0_f64;
    for result in worker_results {
        let (state, log, dual) = result?;
        workers.push(state);
        events.extend(log);
        max_dual_residual = max_dual_residual.max(dual);
    }
    let mut servers = Vec::with_capacity(server_results.len());
    for result in server_results {
        let (state, log) = result?;
        servers.push(state);
        events.extend(log);
    }
    events.sort_by_key(|e| e.stamp);

    let mut steps = 0;
    let mut filtered = 0;
    let mut pushes = 0;
    let mut pulls = 0;
    let mut max_staleness = 0;
    let mut trajectory = Trajectory::new();
    for (idx, event) in events.iter().enumerate() {
        let (kind, epoch, worker, block, staleness) = match event.kind {
            ThreadEventKind::Compute {
                worker,
                epoch,
                block,
                filtered: was_filtered,
                staleness,
            } => {
                steps += 1;
                max_staleness = max_staleness.max(staleness);
                let kind = if was_filtered {
                    filtered += 1;
                    EventKind::StepFiltered
                } else {
                    EventKind::Step
                };
                (kind, epoch, worker, block, Some(staleness))
            }
            ThreadEventKind::PushDone {
                worker,
                block,
                epoch,
                ..
            } => {
                pushes += 1;
                (EventKind::Push, epoch, worker, block, None)
            }
            ThreadEventKind::Pull {
                worker,
                block,
                epoch,
                ..
            } => {
                pulls += 1;
                (EventKind::Pull, epoch, worker, block, None)
            }
        };
        if config.log_events {
            trajectory.push(EventRecord {
                event: idx as u64,
                epoch,
                worker: Some(worker.0),
                block: Some(block.0),
                kind,
                staleness,
                objective: None,
                stationarity: None,
            });
        }
    }

    let total = events.len() as u64;
    let final_snapshot = Snapshot::assemble(total, wall.as_nanos() as u64, &workers, &servers, problem)?;
    if !final_snapshot.objective.is_finite() {
        return Err(Error::Diverged { event: total });
    }
    trajectory.push(EventRecord {
        event: total,
        epoch: steps,
        worker: None,
        block: None,
        kind: EventKind::Sample,
        staleness: None,
        objective: Some(final_snapshot.objective),
        stationarity: Some(stationarity_p(&final_snapshot, problem, config)),
    });

    let output = RunOutput {
        workers,
        servers,
        trajectory,
        final_snapshot,
        events: total + 1,
        worker_steps: steps,
        filtered_steps: filtered,
        pushes_delivered: pushes,
        pulls_served: pulls,
        max_staleness,
        max_dual_residual,
        wall_seconds: wall.as_secs_f64(),
    };
    Ok((output, events))
}

/// Re-executes a recorded thread schedule on fresh state, single-threaded.
/// Computes re-run each worker's epoch, push applications pop the matching
/// per-edge queue, and pulls serve the replica server's current value; the
/// recorded versions are checked at every step. Returns the replayed
/// worker and server states for comparison against the live run.
pub fn replay_events(
    problem: &ProblemInstance,
    config: &RunConfig,
    events: &[ThreadEvent],
) -> Result<(Vec<WorkerState>, Vec<ServerState>)> {
    let (mut workers, mut servers) = build_states(problem, config)?;
    let mut queues: BTreeMap<(usize, usize), VecDeque<Message>> = BTreeMap::new();
    let mut ordered: Vec<&ThreadEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.stamp);
    for event in ordered {
        let stamp = event.stamp;
        match event.kind {
            ThreadEventKind::Compute {
                worker,
                block,
                filtered,
                ..
            } => {
                let outcome = workers[worker.0].run_epoch(&problem.oracles[worker.0], config)?;
                if outcome.report.block != block {
                    return Err(Error::ReplayMismatch {
                        stamp,
                        detail: format!(
                            "worker {worker} selected {} where the recording has {block}",
                            outcome.report.block
                        ),
                    });
                }
                if outcome.report.filtered != filtered {
                    return Err(Error::ReplayMismatch {
                        stamp,
                        detail: format!(
                            "filter decision flipped for worker {worker} on {block}"
                        ),
                    });
                }
                if let Some(msg) = outcome.push {
                    queues
                        .entry((worker.0, msg.block().0))
                        .or_default()
                        .push_back(msg);
                }
            }
            ThreadEventKind::PushDone {
                worker,
                block,
                version,
                ..
            } => {
                let msg = queues
                    .get_mut(&(worker.0, block.0))
                    .and_then(|q| q.pop_front())
                    .ok_or_else(|| Error::ReplayMismatch {
                        stamp,
                        detail: format!("no queued push on edge ({worker}, {block})"),
                    })?;
                let effect = servers[block.0].receive_push(&msg)?;
                if effect.version != version {
                    return Err(Error::ReplayMismatch {
                        stamp,
                        detail: format!(
                            "{block} reached version {} where the recording has {version}",
                            effect.version
                        ),
                    });
                }
            }
            ThreadEventKind::Pull {
                worker,
                block,
                version,
                ..
            } => {
                let (value, current) = servers[block.0].serve_pull();
                if current != version {
                    return Err(Error::ReplayMismatch {
                        stamp,
                        detail: format!(
                            "{block} is at version {current} where the recording has {version}"
                        ),
                    });
                }
                workers[worker.0].accept_pull(block, value, current, 0)?;
            }
        }
    }
    Ok((workers, servers))
}
