//! Dense per-block vectors and the block-to-coordinate layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::BlockId;

/// A dense vector of one block's coordinates, tagged with the block it
/// belongs to. All values observable outside an engine are finite; the
/// engines call [`BlockVector::check_finite`] at trust boundaries (message
/// receipt, checkpoint load) rather than after every arithmetic step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    pub block: BlockId,
    pub values: Vec<f64>,
}

impl BlockVector {
    pub fn new(block: BlockId, values: Vec<f64>) -> Self {
        BlockVector { block, values }
    }

    pub fn zeros(block: BlockId, dim: usize) -> Self {
        BlockVector {
            block,
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "{context} (block {})",
                self.block
            )))
        }
    }

    pub fn check_dim(&self, expected: usize, context: &str) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: format!("{context} (block {})", self.block),
                expected,
                got: self.dim(),
            })
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm of (self - other).
    pub fn distance2(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Max-norm of (self - other).
    pub fn distance_inf(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Maps block ids to contiguous coordinate ranges of the concatenated model
/// vector. Block j owns `[offset(j), offset(j) + dim(j))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    // offsets[j] = first global coordinate of block j; a final sentinel
    // entry holds the total dimension, so offsets.len() = num_blocks + 1.
    offsets: Vec<usize>,
}

impl BlockMap {
    pub fn from_dims(block_dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(block_dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in block_dims {
            acc += d;
            offsets.push(acc);
        }
        BlockMap { offsets }
    }

    /// Equal-width contiguous blocks over `total_dim` coordinates; the last
    /// block is truncated when `width` does not divide `total_dim`.
    pub fn contiguous(total_dim: usize, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("block width must be positive".into()));
        }
        if total_dim == 0 {
            return Err(Error::Config(
                "cannot build a block layout over zero coordinates".into(),
            ));
        }
        let mut dims = Vec::new();
        let mut remaining = total_dim;
        while remaining > 0 {
            let d = width.min(remaining);
            dims.push(d);
            remaining -= d;
        }
        Ok(BlockMap::from_dims(&dims))
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, j: BlockId) -> usize {
        self.offsets[j.0]
    }

    pub fn dim(&self, j: BlockId) -> usize {
        self.offsets[j.0 + 1] - self.offsets[j.0]
    }

    pub fn range(&self, j: BlockId) -> std::ops::Range<usize> {
        self.offsets[j.0]..self.offsets[j.0 + 1]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|j| self.dim(BlockId(j))).collect()
    }

    /// Block owning global coordinate g, plus the offset of g within it.
    pub fn locate(&self, g: usize) -> (BlockId, usize) {
        debug_assert!(g < self.total_dim());
        // partition_point returns the first offset > g, so the owning block
        // is one before it.
        let j = self.offsets.partition_point(|&o| o <= g) - 1;
        (BlockId(j), g - self.offsets[j])
    }

    /// Copies `block` into its range of the full model vector.
    pub fn scatter(&self, block: &BlockVector, full: &mut [f64]) {
        full[self.range(block.block)].copy_from_slice(&block.values);
    }

    /// Extracts block j out of the full model vector.
    pub fn gather(&self, full: &[f64], j: BlockId) -> BlockVector {
        BlockVector::new(j, full[self.range(j)].to_vec())
    }
}
