//! Local loss terms, the shared regularizer, and dataset containers.
//!
//! Each worker owns one [`LossOracle`]: an immutable view of its data shard
//! that can evaluate the shard's loss and per-block gradients against any
//! model it is handed. The shared [`Regularizer`] is an L1 weight plus a box
//! constraint, applied by the block servers through its proximal map.

pub mod libsvm;
pub mod synthetic;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{BlockMap, BlockVector};
use crate::error::{Error, Result};
use crate::topology::{build_topology, BlockId, Topology};

/// Sparse feature vector: strictly ascending 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Config(format!(
                "sparse vector with {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "sparse vector indices must be strictly ascending".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sparse vector value".into()));
        }
        Ok(SparseVec { indices, values })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseVec,
    pub label: f64,
}

/// One worker's data shard. Always nonempty.
#[derive(Debug, Clone)]
pub struct LocalDataset {
    samples: Vec<Sample>,
    active: Vec<u32>,
}

impl LocalDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("a data shard must hold at least one sample".into()));
        }
        for s in &samples {
            if !s.label.is_finite() {
                return Err(Error::NonFinite("sample label".into()));
            }
        }
        let mut active: BTreeSet<u32> = BTreeSet::new();
        for s in &samples {
            active.extend(s.features.indices.iter().copied());
        }
        Ok(LocalDataset {
            samples,
            active: active.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Sorted union of feature indices that appear in any sample.
    pub fn active_features(&self) -> &[u32] {
        &self.active
    }

    pub fn max_feature(&self) -> Option<u32> {
        self.active.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// (1/m) sum of log(1 + exp(-y <x, w>)), labels in {-1, +1}.
    Logistic,
    /// (1/2m) sum of (<x, w> - y)^2, real labels. Exists mainly so tests
    /// can compare against exact convex references.
    LeastSquares,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "least-squares" => Ok(LossKind::LeastSquares),
            other => Err(format!(
                "unknown loss `{other}` (expected logistic or least-squares)"
            )),
        }
    }
}

/// Numerically safe log(1 + exp(v)).
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Numerically safe logistic sigmoid.
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Immutable per-worker loss evaluator.
#[derive(Debug, Clone)]
pub struct LossOracle {
    kind: LossKind,
    data: LocalDataset,
    block_map: Arc<BlockMap>,
    active_blocks: BTreeSet<BlockId>,
}

impl LossOracle {
    pub fn new(kind: LossKind, data: LocalDataset, block_map: Arc<BlockMap>) -> Result<Self> {
        if let Some(max) = data.max_feature() {
            if max as usize >= block_map.total_dim() {
                return Err(Error::DimensionMismatch {
                    context: "dataset feature index vs block layout".into(),
                    expected: block_map.total_dim(),
                    got: max as usize + 1,
                });
            }
        }
        if kind == LossKind::Logistic {
            for (l, s) in data.samples.iter().enumerate() {
                if s.label != 1.0 && s.label != -1.0 {
                    return Err(Error::Config(format!(
                        "logistic loss needs labels in {{-1, +1}}; sample {l} has {}",
                        s.label
                    )));
                }
            }
        }
        let active_blocks = data
            .active
            .iter()
            .map(|&g| block_map.locate(g as usize).0)
            .collect();
        Ok(LossOracle {
            kind,
            data,
            block_map,
            active_blocks,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn num_samples(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &LocalDataset {
        &self.data
    }

    pub fn block_map(&self) -> &BlockMap {
        &self.block_map
    }

    /// Blocks in which this shard has at least one active feature. These
    /// are exactly the worker's edges in the derived topology.
    pub fn active_blocks(&self) -> &BTreeSet<BlockId> {
        &self.active_blocks
    }

    fn margin(&self, get: &impl Fn(u32) -> f64, s: &Sample) -> f64 {
        s.features.iter().map(|(g, v)| v * get(g)).sum()
    }

    /// Loss with coordinates supplied by an accessor. The accessor must
    /// cover every active feature; coordinates this shard never touches are
    /// never requested.
    pub fn loss_value_at(&self, get: impl Fn(u32) -> f64) -> f64 {
        let m = self.data.len() as f64;
        let total: f64 = self
            .data
            .samples
            .iter()
            .map(|s| {
                let u = self.margin(&get, s);
                match self.kind {
                    LossKind::Logistic => softplus(-s.label * u),
                    LossKind::LeastSquares => 0.5 * (u - s.label) * (u - s.label),
                }
            })
            .sum();
        total / m
    }

    /// Loss at a full concatenated model vector.
    pub fn loss_value(&self, model: &[f64]) -> Result<f64> {
        self.check_model(model)?;
        Ok(self.loss_value_at(|g| model[g as usize]))
    }

    /// Gradient restricted to block j, coordinates supplied by an accessor.
    /// Identically zero for blocks where the shard has no active feature.
    pub fn block_gradient_at(&self, get: impl Fn(u32) -> f64, j: BlockId) -> BlockVector {
        let dim = self.block_map.dim(j);
        let mut out = BlockVector::zeros(j, dim);
        if !self.active_blocks.contains(&j) {
            return out;
        }
        let range = self.block_map.range(j);
        let (lo, hi) = (range.start as u32, range.end as u32);
        let m = self.data.len() as f64;
        for s in &self.data.samples {
            let u = self.margin(&get, s);
            // d(loss_l)/du
            let c = match self.kind {
                LossKind::Logistic => -s.label * sigmoid(-s.label * u),
                LossKind::LeastSquares => u - s.label,
            };
            if c == 0.0 {
                continue;
            }
            for (g, v) in s.features.iter() {
                if g >= lo && g < hi {
                    out.values[(g - lo) as usize] += c * v;
                }
            }
        }
        for v in &mut out.values {
            *v /= m;
        }
        out
    }

    pub fn block_gradient(&self, model: &[f64], j: BlockId) -> Result<BlockVector> {
        self.check_model(model)?;
        if j.0 >= self.block_map.num_blocks() {
            return Err(Error::UnknownBlock(j));
        }
        Ok(self.block_gradient_at(|g| model[g as usize], j))
    }

    fn check_model(&self, model: &[f64]) -> Result<()> {
        if model.len() != self.block_map.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "model vector".into(),
                expected: self.block_map.total_dim(),
                got: model.len(),
            });
        }
        Ok(())
    }

    /// Estimated gradient Lipschitz constant of this shard's loss restricted
    /// to block j: the top eigenvalue of the block-restricted Gram matrix,
    /// scaled by 1/(4m) for logistic and 1/m for least squares. Computed by
    /// power iteration to the given relative tolerance; diagnostic quality,
    /// never used inside an update rule. Inactive blocks report 0.
    pub fn estimate_block_lipschitz(&self, j: BlockId, rel_tol: f64) -> f64 {
        if !self.active_blocks.contains(&j) {
            return 0.0;
        }
        let range = self.block_map.range(j);
        let (lo, hi) = (range.start as u32, range.end as u32);
        let dim = (hi - lo) as usize;

        // Gram-vector product without forming the matrix.
        let gram_mul = |v: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for s in &self.data.samples {
                let mut dot = 0.0;
                for (g, x) in s.features.iter() {
                    if g >= lo && g < hi {
                        dot += x * v[(g - lo) as usize];
                    }
                }
                if dot == 0.0 {
                    continue;
                }
                for (g, x) in s.features.iter() {
                    if g >= lo && g < hi {
                        out[(g - lo) as usize] += dot * x;
                    }
                }
            }
        };

        // Deterministic pseudo-random start so the iterate is in generic
        // position (an all-ones start can be orthogonal to the top
        // eigenvector).
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a7d_31ce ^ j.0 as u64);
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);

        let mut w = vec![0.0; dim];
        let mut lambda_prev = 0.0;
        let mut lambda = 0.0;
        for _ in 0..1000 {
            gram_mul(&v, &mut w);
            // Rayleigh quotient with unit v.
            lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if wn == 0.0 {
                lambda = 0.0;
                break;
            }
            v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / wn);
            if (lambda - lambda_prev).abs() <= rel_tol * lambda.abs().max(1e-30) {
                break;
            }
            lambda_prev = lambda;
        }

        let m = self.data.len() as f64;
        match self.kind {
            LossKind::Logistic => 0.25 * lambda / m,
            LossKind::LeastSquares => lambda / m,
        }
    }
}

/// Shared regularizer h(z) = lambda * ||z||_1 restricted to the box
/// [-clip, clip]^d. `clip` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub lambda: f64,
    pub clip: f64,
}

impl Regularizer {
    pub fn new(lambda: f64, clip: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if !(clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {clip}")));
        }
        Ok(Regularizer { lambda, clip })
    }

    /// h at a feasible point (the box contributes nothing there; all
    /// consensus iterates are feasible by construction of `prox`).
    pub fn value(&self, v: &[f64]) -> f64 {
        self.lambda * v.iter().map(|a| a.abs()).sum::<f64>()
    }

    pub fn is_feasible(&self, v: &[f64]) -> bool {
        v.iter().all(|a| a.abs() <= self.clip)
    }

    /// prox_{h}^{mu}(v): componentwise soft-threshold by lambda/mu, then
    /// clamp into the box. Requires mu > 0.
    pub fn prox_scalar(&self, v: f64, mu: f64) -> f64 {
        debug_assert!(mu > 0.0);
        let t = self.lambda / mu;
        let shrunk = if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        };
        shrunk.clamp(-self.clip, self.clip)
    }

    pub fn prox(&self, v: &[f64], mu: f64) -> Vec<f64> {
        v.iter().map(|&a| self.prox_scalar(a, mu)).collect()
    }

    pub fn prox_block(&self, v: &BlockVector, mu: f64) -> BlockVector {
        BlockVector::new(v.block, self.prox(&v.values, mu))
    }

    /// Euclidean distance from `v` to the subdifferential of h at `z`,
    /// computed componentwise in closed form. Used for the dual feasibility
    /// residual; `z` must be feasible.
    pub fn subgradient_distance(&self, z: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), v.len());
        let l = self.lambda;
        let sq: f64 = z
            .iter()
            .zip(v)
            .map(|(&zi, &vi)| {
                let d = if zi >= self.clip {
                    // subdifferential [l, inf)
                    (l - vi).max(0.0)
                } else if zi <= -self.clip {
                    // (-inf, -l]
                    (vi + l).max(0.0)
                } else if zi > 0.0 {
                    (vi - l).abs()
                } else if zi < 0.0 {
                    (vi + l).abs()
                } else {
                    // [-l, l]
                    (vi.abs() - l).max(0.0)
                };
                d * d
            })
            .sum();
        sq.sqrt()
    }
}

/// A fully assembled consensus problem: topology, layout, one oracle per
/// worker, and the shared regularizer.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub topology: Arc<Topology>,
    pub block_map: Arc<BlockMap>,
    pub oracles: Vec<Arc<LossOracle>>,
    pub regularizer: Regularizer,
}

impl ProblemInstance {
    /// Derives the topology from data activity: worker i is connected to
    /// block j exactly when shard i has a nonzero feature in block j.
    /// Rejects layouts where some block is touched by no shard or some
    /// shard touches no block.
    pub fn from_shards(
        kind: LossKind,
        shards: Vec<LocalDataset>,
        block_map: BlockMap,
        regularizer: Regularizer,
    ) -> Result<Self> {
        let block_map = Arc::new(block_map);
        let num_workers = shards.len();
        if num_workers == 0 {
            return Err(Error::Config("a problem needs at least one worker".into()));
        }
        let mut oracles = Vec::with_capacity(num_workers);
        let mut edges = Vec::new();
        for (i, shard) in shards.into_iter().enumerate() {
            let oracle = LossOracle::new(kind, shard, Arc::clone(&block_map))?;
            for &j in oracle.active_blocks() {
                edges.push((i, j.0));
            }
            oracles.push(Arc::new(oracle));
        }
        let topology = Arc::new(build_topology(num_workers, &edges, &block_map.dims())?);
        Ok(ProblemInstance {
            topology,
            block_map,
            oracles,
            regularizer,
        })
    }

    /// Objective at a consensus point: sum of shard losses plus h.
    pub fn objective(&self, z: &[f64]) -> Result<f64> {
        let mut total = self.regularizer.value(z);
        for oracle in &self.oracles {
            total += oracle.loss_value(z)?;
        }
        Ok(total)
    }
}
