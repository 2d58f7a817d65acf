//! Deterministic single-threaded event simulation.
//!
//! Worker activations, message transit, and pull staleness all come from
//! seeded streams, so a run is a pure function of the problem and the
//! configuration: same seed, same trajectory, byte for byte. Transit delays
//! and version lags are drawn per edge within the configured bounds, which
//! makes this the mode for studying how far staleness can be pushed before
//! convergence degrades.
//!
//! Each directed edge behaves like a FIFO channel: a freshly drawn short
//! delay never overtakes an earlier long one, the delivery time is clamped
//! up instead. Server caches are last-write-wins, so out-of-order pushes
//! would silently revert an edge to an older payload (and break the
//! equivalence between direct and delta-encoded pushes, which reordering
//! affects differently). The clamp stays within the configured bound: a
//! message inherits at most the due time of an earlier send on the same
//! edge, which that send already kept within its own bound.
//!
//! Two schedules share the engine. `Seeded` interleaves workers one epoch
//! at a time in uniformly random order with delayed delivery. `Barrier`
//! reproduces the synchronous round structure inside the simulator, which
//! pins the two transports against each other in tests.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BlockOrder, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::message::Message;
use crate::problems::ProblemInstance;
use crate::topology::{BlockId, WorkerId};
use crate::trajectory::EventKind;
use crate::transport::{
    build_states, deliver_pull, DelayModel, Recorder, RunOutput, VersionHistory,
};
use crate::worker::derive_stream_seed;

/// How the simulator decides who acts next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimSchedule {
    /// One uniformly drawn worker epoch per tick, deliveries in transit for
    /// a bounded number of ticks.
    Seeded,
    /// Full synchronous rounds: every worker sweeps every block, then all
    /// pushes land, then all caches refresh. With zero delay bounds this is
    /// arithmetic-identical to the dedicated synchronous loop.
    Barrier,
}

enum Delivery {
    Push(Message),
    PullServe { worker: WorkerId, block: BlockId },
}

/// Heap entry ordered by due tick, ties broken by insertion sequence so
/// delivery order is total and reproducible.
struct HeapEntry {
    due: u64,
    seq: u64,
    delivery: Delivery,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the std max-heap pops the earliest entry first.
        other
            .due
            .cmp(&self.due)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub struct SimEngine<'a> {
    problem: &'a ProblemInstance,
    worker_cfg: RunConfig,
    schedule: SimSchedule,
    workers: Vec<crate::worker::WorkerState>,
    servers: Vec<crate::server::ServerState>,
    histories: Vec<VersionHistory>,
    /// Transit delay in ticks for scheduled deliveries.
    ticks_model: DelayModel,
    /// Version lag applied when a pull is finally served.
    version_model: DelayModel,
    schedule_rng: ChaCha8Rng,
    heap: BinaryHeap<HeapEntry>,
    /// Latest scheduled due tick per directed edge, keyed by (worker,
    /// block, direction); deliveries clamp up to it so edges stay FIFO.
    horizons: std::collections::BTreeMap<(usize, usize, bool), u64>,
    seq: u64,
    tick: u64,
    /// Per-worker epochs still to run (seeded schedule).
    remaining: Vec<u64>,
    /// Rounds still to run (barrier schedule).
    rounds_left: u64,
    recorder: Recorder<'a>,
}

impl<'a> SimEngine<'a> {
    pub fn new(
        problem: &'a ProblemInstance,
        config: &'a RunConfig,
        schedule: SimSchedule,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::AsyncSim {
            return Err(Error::Config(format!(
                "the simulator requires async-sim mode, got {}",
                config.mode
            )));
        }
        let worker_cfg = match schedule {
            SimSchedule::Seeded => config.clone(),
            SimSchedule::Barrier => RunConfig {
                block_order: BlockOrder::Cyclic,
                ..config.clone()
            },
        };
        let (workers, servers) = build_states(problem, &worker_cfg)?;
        // Depth covers the largest admissible lag anywhere in the table.
        let capacity = config.delay.max_bound() as usize + 1;
        let histories = servers
            .iter()
            .map(|s| VersionHistory::new(s.block(), capacity, s.serve_pull().0))
            .collect();
        let remaining = match schedule {
            SimSchedule::Seeded => vec![config.max_epochs; workers.len()],
            SimSchedule::Barrier => vec![0; workers.len()],
        };
        let rounds_left = match schedule {
            SimSchedule::Seeded => 0,
            SimSchedule::Barrier => config.max_epochs,
        };
        Ok(SimEngine {
            problem,
            schedule,
            workers,
            servers,
            histories,
            ticks_model: DelayModel::new(config, "delay-ticks"),
            version_model: DelayModel::new(config, "delay-version"),
            schedule_rng: ChaCha8Rng::seed_from_u64(derive_stream_seed(
                config.seed,
                "schedule",
                0,
            )),
            heap: BinaryHeap::new(),
            horizons: std::collections::BTreeMap::new(),
            seq: 0,
            tick: 0,
            remaining,
            rounds_left,
            recorder: Recorder::new(problem, config),
            worker_cfg,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Live worker states, for callers inspecting a run between steps.
    pub fn workers(&self) -> &[crate::worker::WorkerState] {
        &self.workers
    }

    /// Live server states, for callers inspecting a run between steps.
    pub fn servers(&self) -> &[crate::server::ServerState] {
        &self.servers
    }

    /// Advances the simulation by one unit (a tick under the seeded
    /// schedule, a full round under the barrier schedule). Returns false
    /// once all work, including in-flight deliveries, is done.
    pub fn step(&mut self) -> Result<bool> {
        match self.schedule {
            SimSchedule::Seeded => self.step_seeded(),
            SimSchedule::Barrier => self.step_barrier(),
        }
    }

    pub fn run(mut self) -> Result<RunOutput> {
        while self.step()? {}
        self.finish()
    }

    pub fn finish(self) -> Result<RunOutput> {
        self.recorder.finish(self.workers, self.servers, 0.0)
    }

    fn schedule_delivery(&mut self, due: u64, delivery: Delivery) {
        self.heap.push(HeapEntry {
            due,
            seq: self.seq,
            delivery,
        });
        self.seq += 1;
    }

    /// Clamps a drawn due tick so the directed edge delivers in send
    /// order. Ties share a due tick and pop in insertion order, which is
    /// send order.
    fn fifo_due(&mut self, worker: usize, block: usize, push: bool, drawn: u64) -> u64 {
        let horizon = self.horizons.entry((worker, block, push)).or_insert(0);
        let due = drawn.max(*horizon);
        *horizon = due;
        due
    }

    fn deliver(&mut self, delivery: Delivery) -> Result<()> {
        match delivery {
            Delivery::Push(msg) => {
                let j = msg.block();
                let sender = msg.sender().expect("pushes carry a sender");
                let effect = self.servers[j.0].receive_push(&msg)?;
                self.histories[j.0].record(effect.version, self.servers[j.0].z_dirty().clone());
                self.recorder.pushes += 1;
                self.recorder.emit(
                    EventKind::Push,
                    msg.epoch().unwrap_or(0),
                    Some(sender.0),
                    Some(j.0),
                    None,
                );
                self.recorder
                    .maybe_sample(self.tick, &self.workers, &self.servers)?;
                if effect.committed {
                    let commits = self.servers[j.0].commit_count();
                    self.recorder.sample(
                        EventKind::Commit,
                        commits,
                        Some(j.0),
                        &self.workers,
                        &self.servers,
                    )?;
                }
            }
            Delivery::PullServe { worker, block } => {
                let served = deliver_pull(
                    &mut self.version_model,
                    &self.histories[block.0],
                    worker,
                    block,
                )?;
                self.workers[worker.0].accept_pull(
                    block,
                    served.value,
                    served.version,
                    served.staleness,
                )?;
                self.recorder.pulls += 1;
                self.recorder.emit(
                    EventKind::Pull,
                    self.workers[worker.0].epoch(),
                    Some(worker.0),
                    Some(block.0),
                    Some(served.staleness),
                );
                self.recorder
                    .maybe_sample(self.tick, &self.workers, &self.servers)?;
            }
        }
        Ok(())
    }

    /// Runs one worker epoch and schedules its outgoing traffic.
    fn worker_epoch(&mut self, i: usize, delayed: bool) -> Result<Option<Message>> {
        let outcome = self.workers[i].run_epoch(&self.problem.oracles[i], &self.worker_cfg)?;
        self.recorder.count_step(&outcome.report);
        let kind = if outcome.report.filtered {
            EventKind::StepFiltered
        } else {
            EventKind::Step
        };
        self.recorder.emit(
            kind,
            outcome.report.epoch,
            Some(i),
            Some(outcome.report.block.0),
            None,
        );
        self.recorder
            .maybe_sample(self.tick, &self.workers, &self.servers)?;
        if !delayed {
            return Ok(outcome.push);
        }
        if let Some(msg) = outcome.push {
            let drawn = self.tick + self.ticks_model.draw(WorkerId(i), msg.block());
            let due = self.fifo_due(i, msg.block().0, true, drawn);
            self.schedule_delivery(due, Delivery::Push(msg));
        }
        for j in outcome.pull_requests {
            let drawn = self.tick + self.ticks_model.draw(WorkerId(i), j);
            let due = self.fifo_due(i, j.0, false, drawn);
            self.schedule_delivery(
                due,
                Delivery::PullServe {
                    worker: WorkerId(i),
                    block: j,
                },
            );
        }
        Ok(None)
    }

    fn step_seeded(&mut self) -> Result<bool> {
        while let Some(entry) = self.heap.peek() {
            if entry.due > self.tick {
                break;
            }
            let entry = self.heap.pop().unwrap();
            self.deliver(entry.delivery)?;
        }
        let active: Vec<usize> = (0..self.workers.len())
            .filter(|&i| self.remaining[i] > 0)
            .collect();
        if active.is_empty() {
            // Budgets are spent; fast-forward to the next in-flight
            // delivery, or stop when the wire is empty.
            return match self.heap.peek() {
                Some(entry) => {
                    self.tick = entry.due;
                    Ok(true)
                }
                None => Ok(false),
            };
        }
        let pick = active[self.schedule_rng.gen_range(0..active.len())];
        self.remaining[pick] -= 1;
        self.worker_epoch(pick, true)?;
        self.tick += 1;
        Ok(true)
    }

    fn step_barrier(&mut self) -> Result<bool> {
        if self.rounds_left == 0 {
            return Ok(false);
        }
        self.rounds_left -= 1;
        let mut outbox = Vec::new();
        for i in 0..self.workers.len() {
            for _ in 0..self.workers[i].neighbors().len() {
                if let Some(msg) = self.worker_epoch(i, false)? {
                    outbox.push(msg);
                }
            }
        }
        for msg in outbox {
            self.deliver(Delivery::Push(msg))?;
        }
        for i in 0..self.workers.len() {
            for k in 0..self.workers[i].neighbors().len() {
                let j = self.workers[i].neighbors()[k];
                self.deliver(Delivery::PullServe {
                    worker: WorkerId(i),
                    block: j,
                })?;
            }
        }
        self.tick += 1;
        Ok(true)
    }
}

/// Runs the seeded asynchronous schedule to completion.
pub fn run_async_sim(problem: &ProblemInstance, config: &RunConfig) -> Result<RunOutput> {
    SimEngine::new(problem, config, SimSchedule::Seeded)?.run()
}

/// Runs synchronous rounds through the simulator.
pub fn run_async_sim_barrier(problem: &ProblemInstance, config: &RunConfig) -> Result<RunOutput> {
    SimEngine::new(problem, config, SimSchedule::Barrier)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::BlockMap;
    use crate::config::{DelayTable, RhoTable};
    use crate::problems::{LocalDataset, LossKind, Regularizer, Sample, SparseVec};
    use crate::transport::run_sync;

    fn sample(feats: &[(u32, f64)], label: f64) -> Sample {
        Sample {
            features: SparseVec::new(
                feats.iter().map(|&(i, _)| i).collect(),
                feats.iter().map(|&(_, v)| v).collect(),
            )
            .unwrap(),
            label,
        }
    }

    /// Two workers, two scalar blocks, overlapping supports.
    fn two_by_two() -> ProblemInstance {
        ProblemInstance::from_shards(
            LossKind::LeastSquares,
            vec![
                LocalDataset::new(vec![
                    sample(&[(0, 1.0)], 1.0),
                    sample(&[(0, 0.5), (1, 0.5)], 0.2),
                ])
                .unwrap(),
                LocalDataset::new(vec![
                    sample(&[(1, 1.0)], -0.4),
                    sample(&[(0, 0.3), (1, -0.7)], 0.1),
                ])
                .unwrap(),
            ],
            BlockMap::from_dims(&[1, 1]),
            Regularizer::new(0.01, 1e4).unwrap(),
        )
        .unwrap()
    }

    fn sim_config(delay: u64, epochs: u64, seed: u64) -> RunConfig {
        RunConfig {
            rho: RhoTable::uniform(6.0),
            gamma: 0.5,
            delay: DelayTable::uniform(delay),
            seed,
            max_epochs: epochs,
            ..RunConfig::default()
        }
    }

    #[test]
    fn same_seed_reproduces_the_trajectory_byte_for_byte() {
        let problem = two_by_two();
        let config = sim_config(3, 40, 11);
        let a = run_async_sim(&problem, &config).unwrap();
        let b = run_async_sim(&problem, &config).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.trajectory.write_csv(&mut csv_a).unwrap();
        b.trajectory.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        assert_eq!(a.final_z(&problem), b.final_z(&problem));

        // A different seed reorders the schedule.
        let other = run_async_sim(&problem, &sim_config(3, 40, 12)).unwrap();
        let mut csv_c = Vec::new();
        other.trajectory.write_csv(&mut csv_c).unwrap();
        assert_ne!(csv_a, csv_c);
    }

    #[test]
    fn barrier_with_zero_delay_matches_the_synchronous_loop_bitwise() {
        let problem = two_by_two();
        let sim_cfg = sim_config(0, 25, 3);
        let sync_cfg = RunConfig {
            mode: Mode::Sync,
            ..sim_cfg.clone()
        };
        let via_sim = run_async_sim_barrier(&problem, &sim_cfg).unwrap();
        let via_sync = run_sync(&problem, &sync_cfg).unwrap();
        let z_sim = via_sim.final_z(&problem);
        let z_sync = via_sync.final_z(&problem);
        assert_eq!(z_sim, z_sync, "identical arithmetic expected");
        assert_eq!(via_sim.worker_steps, via_sync.worker_steps);
        assert_eq!(via_sim.pushes_delivered, via_sync.pushes_delivered);
        assert_eq!(
            via_sim.trajectory.count_kind(EventKind::Commit),
            via_sync.trajectory.count_kind(EventKind::Commit)
        );
    }

    #[test]
    fn bounded_staleness_still_converges() {
        let problem = two_by_two();
        let fresh = run_async_sim(&problem, &sim_config(0, 3000, 7)).unwrap();
        let stale = run_async_sim(&problem, &sim_config(5, 3000, 7)).unwrap();
        let z_fresh = fresh.final_z(&problem);
        let z_stale = stale.final_z(&problem);
        for (a, b) in z_fresh.iter().zip(&z_stale) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        assert!(stale.max_staleness <= 5);
        assert!(
            stale.max_staleness > 0,
            "delay injection never produced a stale pull"
        );
    }

    #[test]
    fn every_unfiltered_step_is_eventually_delivered() {
        let problem = two_by_two();
        let out = run_async_sim(&problem, &sim_config(4, 50, 21)).unwrap();
        assert_eq!(out.worker_steps, 2 * 50);
        assert_eq!(out.filtered_steps, 0);
        assert_eq!(out.pushes_delivered, out.worker_steps);
        // Each epoch requests a refresh of both neighbor blocks.
        assert_eq!(out.pulls_served, 2 * out.worker_steps);
    }

    #[test]
    fn granular_stepping_matches_run() {
        let problem = two_by_two();
        let config = sim_config(2, 15, 5);
        let whole = run_async_sim(&problem, &config).unwrap();
        let mut engine = SimEngine::new(&problem, &config, SimSchedule::Seeded).unwrap();
        let mut steps = 0;
        while engine.step().unwrap() {
            steps += 1;
        }
        assert!(steps >= 30, "two workers, 15 epochs each");
        let piecewise = engine.finish().unwrap();
        assert_eq!(whole.final_z(&problem), piecewise.final_z(&problem));
        assert_eq!(whole.events, piecewise.events);
    }

    #[test]
    fn sync_mode_config_is_rejected() {
        let problem = two_by_two();
        let config = RunConfig {
            mode: Mode::Sync,
            rho: RhoTable::uniform(2.0),
            ..RunConfig::default()
        };
        assert!(run_async_sim(&problem, &config).is_err());
    }
}
