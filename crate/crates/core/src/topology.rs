//! Bipartite worker/block topology.
//!
//! The consensus problem couples local variables to shared blocks through an
//! edge set: edge (i, j) means worker i holds a local copy of block j. All
//! engines, metrics, and loaders agree on which copies exist by consulting
//! one [`Topology`] value, built once and never mutated.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a worker process. Dense, 0-based.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct WorkerId(pub usize);

/// Index of a parameter block. Dense, 0-based.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct BlockId(pub usize);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable bipartite graph between workers and blocks, with per-block
/// dimensions. Neighbor lists are kept sorted so that every iteration over
/// them is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_workers: usize,
    block_dims: Vec<usize>,
    edges: BTreeSet<(WorkerId, BlockId)>,
    worker_neighbors: Vec<Vec<BlockId>>,
    block_neighbors: Vec<Vec<WorkerId>>,
}

/// Validates and indexes an edge list.
///
/// `num_workers` is explicit rather than inferred from the edges so that a
/// worker with no edges is reported as the configuration error it is instead
/// of silently vanishing. Duplicate edges are collapsed. Fails on any edge
/// out of range, any zero-dimension block, and any worker or block that ends
/// up with no edges.
pub fn build_topology(
    num_workers: usize,
    edge_list: &[(usize, usize)],
    block_dims: &[usize],
) -> Result<Topology> {
    let num_blocks = block_dims.len();
    for (j, &d) in block_dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::EmptyBlock(BlockId(j)));
        }
    }

    let mut edges = BTreeSet::new();
    for &(i, j) in edge_list {
        if i >= num_workers || j >= num_blocks {
            return Err(Error::EdgeOutOfRange {
                worker: i,
                block: j,
                workers: num_workers,
                blocks: num_blocks,
            });
        }
        edges.insert((WorkerId(i), BlockId(j)));
    }

    let mut worker_neighbors = vec![Vec::new(); num_workers];
    let mut block_neighbors = vec![Vec::new(); num_blocks];
    for &(i, j) in &edges {
        worker_neighbors[i.0].push(j);
        block_neighbors[j.0].push(i);
    }
    // BTreeSet iteration already yields (worker, block) sorted, so both
    // neighbor lists come out sorted without an extra pass.

    for (i, n) in worker_neighbors.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::OrphanWorker(WorkerId(i)));
        }
    }
    for (j, n) in block_neighbors.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::OrphanBlock(BlockId(j)));
        }
    }

    Ok(Topology {
        num_workers,
        block_dims: block_dims.to_vec(),
        edges,
        worker_neighbors,
        block_neighbors,
    })
}

impl Topology {
    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn block_dim(&self, j: BlockId) -> usize {
        self.block_dims[j.0]
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn contains_edge(&self, i: WorkerId, j: BlockId) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Blocks adjacent to worker i, sorted ascending.
    pub fn worker_neighbors(&self, i: WorkerId) -> &[BlockId] {
        &self.worker_neighbors[i.0]
    }

    /// Workers adjacent to block j, sorted ascending.
    pub fn block_neighbors(&self, j: BlockId) -> &[WorkerId] {
        &self.block_neighbors[j.0]
    }

    /// All edges in (worker, block) sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (WorkerId, BlockId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> {
        (0..self.num_workers).map(WorkerId)
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> {
        (0..self.num_blocks()).map(BlockId)
    }

    /// Total model dimension: sum of all block dimensions.
    pub fn total_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }
}
