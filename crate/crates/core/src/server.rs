//! Server-side state for one consensus block.
//!
//! The server keeps two values per block: the eager estimate `z_dirty`,
//! refreshed on every incoming push and served to pulls, and the committed
//! value `z`, advanced only once every neighboring worker has pushed since
//! the previous commit. Each push applies the proximal averaging step
//!
//! ```text
//! z~ <- prox[h, mu]( (gamma z~ + sum_i w~_i) / (gamma + sum_i rho_i) )
//! ```
//!
//! where w~_i is the latest aggregation payload from worker i. Deltas
//! telescope into a running sum `s`; full payloads replace the per-worker
//! cache. Both bookkeeping forms are maintained regardless of mode so the
//! two transmission formats stay interchangeable.

use std::collections::{BTreeMap, BTreeSet};

use crate::block::BlockVector;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::message::Message;
use crate::problems::Regularizer;
use crate::topology::{BlockId, Topology, WorkerId};

/// What a single push did to the block: the version of the refreshed
/// estimate and whether it completed a commit round.
#[derive(Debug, Clone, Copy)]
pub struct PushEffect {
    pub version: u64,
    pub committed: bool,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    block: BlockId,
    /// Committed value: refreshed once per full round of neighbor pushes.
    z: BlockVector,
    /// Eager value: refreshed on every push, served to pulls.
    z_dirty: BlockVector,
    /// Latest full payload per neighbor.
    w_cache: BTreeMap<WorkerId, BlockVector>,
    /// Running sum of the cached payloads, kept incrementally.
    s: BlockVector,
    /// Neighbors that have pushed since the last commit.
    received: BTreeSet<WorkerId>,
    neighbors: Vec<WorkerId>,
    gamma: f64,
    rho_sum: f64,
    reg: Regularizer,
    version: u64,
    commit_count: u64,
    delta_mode: bool,
    prose_prox_mu: bool,
}

impl ServerState {
    /// Builds the server for `block` with the committed and eager values at
    /// `initial_z` (zeros when absent). The regularizer comes from the
    /// problem being solved, so its proximal map and feasible box are the
    /// same ones the diagnostics evaluate. The initial value must lie
    /// inside that box.
    pub fn new(
        block: BlockId,
        topology: &Topology,
        config: &RunConfig,
        reg: Regularizer,
        initial_z: Option<BlockVector>,
    ) -> Result<Self> {
        if block.0 >= topology.num_blocks() {
            return Err(Error::UnknownBlock(block));
        }
        let dim = topology.block_dim(block);
        let z = match initial_z {
            Some(v) => {
                v.check_dim(dim, "initial consensus value")?;
                v.check_finite("initial consensus value")?;
                if !reg.is_feasible(&v.values) {
                    return Err(Error::Config(format!(
                        "initial value for block {} leaves the feasible box [-{}, {}]",
                        block.0, reg.clip, reg.clip
                    )));
                }
                v
            }
            None => BlockVector::zeros(block, dim),
        };
        let neighbors: Vec<WorkerId> = topology.block_neighbors(block).to_vec();
        let rho_sum: f64 = neighbors.iter().map(|&i| config.rho.edge(i, block)).sum();
        let w_cache = neighbors
            .iter()
            .map(|&i| (i, BlockVector::zeros(block, dim)))
            .collect();
        Ok(ServerState {
            block,
            z_dirty: z.clone(),
            z,
            w_cache,
            s: BlockVector::zeros(block, dim),
            received: BTreeSet::new(),
            neighbors,
            gamma: config.gamma,
            rho_sum,
            reg,
            version: 0,
            commit_count: 0,
            delta_mode: config.delta_push,
            prose_prox_mu: config.prose_prox_mu,
        })
    }

    /// Rebuilds a server from persisted fields, revalidating consistency.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        block: BlockId,
        topology: &Topology,
        config: &RunConfig,
        reg: Regularizer,
        z: BlockVector,
        z_dirty: BlockVector,
        s: BlockVector,
        w_cache: BTreeMap<WorkerId, BlockVector>,
        version: u64,
        commit_count: u64,
    ) -> Result<Self> {
        let mut state = ServerState::new(block, topology, config, reg, Some(z))?;
        z_dirty.check_dim(state.z.dim(), "restored eager value")?;
        z_dirty.check_finite("restored eager value")?;
        s.check_dim(state.z.dim(), "restored payload sum")?;
        s.check_finite("restored payload sum")?;
        if let Some(&missing) = state.neighbors.iter().find(|i| !w_cache.contains_key(i)) {
            return Err(Error::IncompleteSnapshot {
                worker: missing,
                block,
            });
        }
        for w in w_cache.values() {
            w.check_dim(state.z.dim(), "restored payload")?;
            w.check_finite("restored payload")?;
        }
        state.z_dirty = z_dirty;
        state.s = s;
        state.w_cache = w_cache;
        state.version = version;
        state.commit_count = commit_count;
        Ok(state)
    }

    pub fn block(&self) -> BlockId {
        self.block
    }

    pub fn z(&self) -> &BlockVector {
        &self.z
    }

    pub fn z_dirty(&self) -> &BlockVector {
        &self.z_dirty
    }

    pub fn s(&self) -> &BlockVector {
        &self.s
    }

    pub fn w_cached(&self, i: WorkerId) -> Option<&BlockVector> {
        self.w_cache.get(&i)
    }

    pub fn w_cache(&self) -> &BTreeMap<WorkerId, BlockVector> {
        &self.w_cache
    }

    pub fn neighbors(&self) -> &[WorkerId] {
        &self.neighbors
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn commit_count(&self) -> u64 {
        self.commit_count
    }

    pub fn rho_sum(&self) -> f64 {
        self.rho_sum
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    /// Applies one push, refreshes the eager value, and commits when this
    /// push completes a full round.
    pub fn receive_push(&mut self, msg: &Message) -> Result<PushEffect> {
        let (sender, payload, is_delta) = match msg {
            Message::PushW {
                sender,
                block,
                payload,
                ..
            } => {
                self.check_block(*block)?;
                (*sender, payload, false)
            }
            Message::PushDelta {
                sender,
                block,
                payload,
                ..
            } => {
                self.check_block(*block)?;
                (*sender, payload, true)
            }
            other => {
                return Err(Error::UnexpectedMessage {
                    got: other.variant_name(),
                    expected: "a push",
                    block: self.block,
                })
            }
        };
        let dim = self.z.dim();
        payload.check_dim(dim, "push payload")?;
        payload.check_finite("push payload")?;
        let cached = self.w_cache.get_mut(&sender).ok_or(Error::NotNeighbor {
            worker: sender,
            block: self.block,
        })?;
        if is_delta {
            for k in 0..dim {
                self.s.values[k] += payload.values[k];
                cached.values[k] += payload.values[k];
            }
        } else {
            for k in 0..dim {
                self.s.values[k] += payload.values[k] - cached.values[k];
                cached.values[k] = payload.values[k];
            }
        }

        // Eager refresh. Delta mode reads the running sum; direct mode
        // re-sums the cache in worker order so the arithmetic is independent
        // of arrival history.
        let denom = self.gamma + self.rho_sum;
        let mu = if self.prose_prox_mu {
            self.rho_sum
        } else {
            denom
        };
        for k in 0..dim {
            let total = if self.delta_mode {
                self.s.values[k]
            } else {
                self.neighbors
                    .iter()
                    .map(|i| self.w_cache[i].values[k])
                    .sum()
            };
            let v = (self.gamma * self.z_dirty.values[k] + total) / denom;
            self.z_dirty.values[k] = self.reg.prox_scalar(v, mu);
        }
        self.z_dirty.check_finite("consensus refresh")?;
        self.version += 1;

        self.received.insert(sender);
        let committed = self.received.len() == self.neighbors.len();
        if committed {
            self.z = self.z_dirty.clone();
            self.commit_count += 1;
            self.received.clear();
        }
        Ok(PushEffect {
            version: self.version,
            committed,
        })
    }

    /// Serves the current eager value and its version.
    pub fn serve_pull(&self) -> (BlockVector, u64) {
        (self.z_dirty.clone(), self.version)
    }

    fn check_block(&self, block: BlockId) -> Result<()> {
        if block == self.block {
            Ok(())
        } else {
            Err(Error::UnknownBlock(block))
        }
    }
}
