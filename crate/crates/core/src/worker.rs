//! Worker-side state machine.
//!
//! Each epoch a worker picks one of its blocks, takes a linearized step on
//! its local copy against the most recently pulled consensus values, updates
//! the matching multiplier, and offers an aggregation push. The closed-form
//! pair
//!
//! ```text
//! x_j <- z~_j - (g_j + y_j) / rho
//! y_j <- y_j + rho (x_j - z~_j)
//! ```
//!
//! telescopes to y_j = -g_j, so directly after the pair the gradient and
//! multiplier cancel; that cancellation is asserted every epoch in debug
//! builds and reported on every epoch for the diagnostics suite.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::BlockVector;
use crate::config::{BlockOrder, RunConfig};
use crate::error::{Error, Result};
use crate::message::Message;
use crate::problems::LossOracle;
use crate::topology::{BlockId, Topology, WorkerId};

/// Tolerance on the gradient/multiplier cancellation, asserted per epoch in
/// debug builds. The identity is exact in real arithmetic; in floats the
/// rounding error grows with the operands, so the assertion scales this by
/// the largest gradient or multiplier entry involved. Runs that blow up then
/// still surface the non-finite or divergence error instead of tripping a
/// sanity check on the way there.
pub const DUAL_IDENTITY_TOL: f64 = 1e-10;

/// Deterministically derives an independent RNG stream from the run seed.
/// `label` separates the consumers (worker draws, schedule, delays) so they
/// never share a stream; `index` separates instances within a consumer.
pub fn derive_stream_seed(seed: u64, label: &str, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(seed ^ mix(h.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))))
}

/// A consensus block as last seen by this worker.
#[derive(Debug, Clone)]
pub struct CachedBlock {
    pub value: BlockVector,
    /// Server-side version counter at the time of the pull.
    pub version: u64,
    /// Injected or observed staleness of that pull, in versions.
    pub staleness: u64,
}

/// Everything one epoch hands back to the transport: the bookkeeping
/// record, an optional push, and the blocks to refresh.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub report: EpochReport,
    pub push: Option<Message>,
    pub pull_requests: Vec<BlockId>,
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub worker: WorkerId,
    /// The epoch index this step executed as (0-based).
    pub epoch: u64,
    pub block: BlockId,
    /// True when the significance filter suppressed the push.
    pub filtered: bool,
    /// Max-norm of gradient + updated multiplier at the evaluation point.
    pub dual_residual_inf: f64,
    /// Staleness of each pull completed during this epoch; filled only by
    /// transports that deliver pulls synchronously.
    pub pull_staleness: Vec<(BlockId, u64)>,
    /// Wall-clock nanoseconds for the step; 0 in simulated transports so
    /// their outputs stay byte-reproducible.
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    id: WorkerId,
    epoch: u64,
    neighbors: Vec<BlockId>,
    rho: BTreeMap<BlockId, f64>,
    x: BTreeMap<BlockId, BlockVector>,
    y: BTreeMap<BlockId, BlockVector>,
    cache: BTreeMap<BlockId, CachedBlock>,
    /// Last transmitted w per edge; deltas and the significance filter are
    /// both measured against it.
    prev_push: BTreeMap<BlockId, BlockVector>,
    rng: ChaCha8Rng,
    cyclic_cursor: usize,
    order: BlockOrder,
    /// Guards the dual update's precondition in debug builds.
    last_primal: Option<(u64, BlockId)>,
}

impl WorkerState {
    /// Builds worker `id` with local copies initialized from the served
    /// consensus values (`initial_z` per neighbor block), multipliers at
    /// zero, and nothing transmitted yet.
    pub fn new(
        id: WorkerId,
        topology: &Topology,
        config: &RunConfig,
        mut initial_z: impl FnMut(BlockId) -> BlockVector,
    ) -> Result<Self> {
        if id.0 >= topology.num_workers() {
            return Err(Error::UnknownWorker(id));
        }
        let neighbors: Vec<BlockId> = topology.worker_neighbors(id).to_vec();
        let mut x = BTreeMap::new();
        let mut y = BTreeMap::new();
        let mut cache = BTreeMap::new();
        let mut prev_push = BTreeMap::new();
        let mut rho = BTreeMap::new();
        for &j in &neighbors {
            let dim = topology.block_dim(j);
            let z0 = initial_z(j);
            z0.check_dim(dim, "initial consensus value")?;
            z0.check_finite("initial consensus value")?;
            x.insert(j, z0.clone());
            y.insert(j, BlockVector::zeros(j, dim));
            cache.insert(
                j,
                CachedBlock {
                    value: z0,
                    version: 0,
                    staleness: 0,
                },
            );
            prev_push.insert(j, BlockVector::zeros(j, dim));
            rho.insert(j, config.rho.edge(id, j));
        }
        Ok(WorkerState {
            id,
            epoch: 0,
            neighbors,
            rho,
            x,
            y,
            cache,
            prev_push,
            rng: ChaCha8Rng::seed_from_u64(derive_stream_seed(config.seed, "worker", id.0 as u64)),
            cyclic_cursor: 0,
            order: config.block_order,
            last_primal: None,
        })
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn neighbors(&self) -> &[BlockId] {
        &self.neighbors
    }

    pub fn rho(&self, j: BlockId) -> f64 {
        self.rho[&j]
    }

    pub fn x(&self, j: BlockId) -> &BlockVector {
        &self.x[&j]
    }

    pub fn y(&self, j: BlockId) -> &BlockVector {
        &self.y[&j]
    }

    pub fn cached(&self, j: BlockId) -> &CachedBlock {
        &self.cache[&j]
    }

    /// Picks the block to update this epoch: a uniform draw or the next in
    /// cyclic order, depending on configuration.
    pub fn select_block(&mut self) -> BlockId {
        match self.order {
            BlockOrder::UniformRandom => {
                let k = self.rng.gen_range(0..self.neighbors.len());
                self.neighbors[k]
            }
            BlockOrder::Cyclic => {
                let j = self.neighbors[self.cyclic_cursor];
                self.cyclic_cursor = (self.cyclic_cursor + 1) % self.neighbors.len();
                j
            }
        }
    }

    /// Reads coordinate `g` of the model as this worker currently sees it.
    /// Panics if `g` lies in a block the worker does not hold; oracles only
    /// request coordinates their shard actually touches.
    fn cached_coord(&self, oracle: &LossOracle, g: u32) -> f64 {
        let (j, off) = oracle.block_map().locate(g as usize);
        self.cache[&j].value.values[off]
    }

    /// Gradient of the local loss restricted to block j, evaluated at the
    /// cached consensus view.
    pub fn gradient_at_cache(&self, oracle: &LossOracle, j: BlockId) -> BlockVector {
        oracle.block_gradient_at(|g| self.cached_coord(oracle, g), j)
    }

    /// Local loss at the cached consensus view.
    pub fn loss_at_cache(&self, oracle: &LossOracle) -> f64 {
        oracle.loss_value_at(|g| self.cached_coord(oracle, g))
    }

    /// Linearized primal step on block j against the cached z~.
    pub fn primal_update(&mut self, j: BlockId, grad: &BlockVector) -> Result<()> {
        let rho = *self.rho.get(&j).ok_or(Error::NotNeighbor {
            worker: self.id,
            block: j,
        })?;
        let z = &self.cache[&j].value;
        grad.check_dim(z.dim(), "gradient")?;
        let y = &self.y[&j];
        let x = self.x.get_mut(&j).unwrap();
        for k in 0..z.values.len() {
            x.values[k] = z.values[k] - (grad.values[k] + y.values[k]) / rho;
        }
        x.check_finite("primal update")?;
        self.last_primal = Some((self.epoch, j));
        Ok(())
    }

    /// Multiplier step on block j. Must follow this epoch's primal update
    /// for the same block.
    pub fn dual_update(&mut self, j: BlockId) -> Result<()> {
        debug_assert_eq!(
            self.last_primal,
            Some((self.epoch, j)),
            "dual update without a matching primal update"
        );
        let rho = *self.rho.get(&j).ok_or(Error::NotNeighbor {
            worker: self.id,
            block: j,
        })?;
        let z = &self.cache[&j].value;
        let x = &self.x[&j];
        let y = self.y.get_mut(&j).unwrap();
        for k in 0..z.values.len() {
            y.values[k] += rho * (x.values[k] - z.values[k]);
        }
        y.check_finite("dual update")
    }

    /// Assembles the push for edge (id, j): w = rho x + y, or its change
    /// since the last transmission in delta mode. Returns `None` when the
    /// change is at or below `threshold` (with a positive threshold); the
    /// transmission baseline then stays untouched.
    pub fn make_push(&mut self, j: BlockId, delta_mode: bool, threshold: f64) -> Option<Message> {
        let rho = self.rho[&j];
        let x = &self.x[&j];
        let y = &self.y[&j];
        let prev = self.prev_push.get_mut(&j).unwrap();
        let dim = x.dim();
        let mut w = BlockVector::zeros(j, dim);
        let mut change_inf = 0.0_f64;
        for k in 0..dim {
            w.values[k] = rho * x.values[k] + y.values[k];
            change_inf = change_inf.max((w.values[k] - prev.values[k]).abs());
        }
        if threshold > 0.0 && change_inf <= threshold {
            return None;
        }
        let msg = if delta_mode {
            let mut payload = BlockVector::zeros(j, dim);
            for k in 0..dim {
                payload.values[k] = w.values[k] - prev.values[k];
            }
            Message::PushDelta {
                sender: self.id,
                block: j,
                payload,
                epoch: self.epoch,
            }
        } else {
            Message::PushW {
                sender: self.id,
                block: j,
                payload: w.clone(),
                epoch: self.epoch,
            }
        };
        *prev = w;
        Some(msg)
    }

    /// One full worker epoch: select, differentiate at the cache, primal,
    /// dual, offer a push, and request refreshes of every neighbor block.
    /// The transport owns delivery of both the push and the pulls.
    pub fn run_epoch(&mut self, oracle: &LossOracle, config: &RunConfig) -> Result<EpochOutcome> {
        let timer = if config.mode == crate::config::Mode::AsyncThreads {
            Some(Instant::now())
        } else {
            None
        };
        let j = self.select_block();
        let grad = self.gradient_at_cache(oracle, j);
        self.primal_update(j, &grad)?;
        self.dual_update(j)?;

        let y = &self.y[&j];
        let mut residual = 0.0_f64;
        let mut scale = 1.0_f64;
        for k in 0..grad.values.len() {
            residual = residual.max((grad.values[k] + y.values[k]).abs());
            scale = scale.max(grad.values[k].abs()).max(y.values[k].abs());
        }
        debug_assert!(
            residual <= DUAL_IDENTITY_TOL * scale,
            "gradient/multiplier cancellation violated: {residual} at magnitude {scale}"
        );

        let threshold = config.filter.threshold(self.epoch);
        let push = self.make_push(j, config.delta_push, threshold);
        let report = EpochReport {
            worker: self.id,
            epoch: self.epoch,
            block: j,
            filtered: push.is_none(),
            dual_residual_inf: residual,
            pull_staleness: Vec::new(),
            wall_ns: timer.map_or(0, |t| t.elapsed().as_nanos() as u64),
        };
        self.epoch += 1;
        Ok(EpochOutcome {
            report,
            push,
            pull_requests: self.neighbors.clone(),
        })
    }

    /// Installs a served consensus value into the cache.
    pub fn accept_pull(
        &mut self,
        block: BlockId,
        value: BlockVector,
        version: u64,
        staleness: u64,
    ) -> Result<()> {
        let slot = self.cache.get_mut(&block).ok_or(Error::NotNeighbor {
            worker: self.id,
            block,
        })?;
        value.check_dim(slot.value.dim(), "pulled consensus value")?;
        value.check_finite("pulled consensus value")?;
        *slot = CachedBlock {
            value,
            version,
            staleness,
        };
        Ok(())
    }
}
