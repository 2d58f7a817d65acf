//! Error type shared across the crate.
//!
//! Variants are grouped by where they surface: construction/validation,
//! ingestion, runtime message handling, and run-level failures. The CLI maps
//! these onto process exit codes, so new variants should keep the
//! `is_io`/`is_divergence` classification below in sync.

use crate::topology::{BlockId, WorkerId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("worker {0} has no edges (orphan worker)")]
    OrphanWorker(WorkerId),

    #[error("block {0} has no edges (orphan block)")]
    OrphanBlock(BlockId),

    #[error("edge ({worker}, {block}) out of range: {workers} workers, {blocks} blocks")]
    EdgeOutOfRange {
        worker: usize,
        block: usize,
        workers: usize,
        blocks: usize,
    },

    #[error("block {0} has dimension 0; every block must hold at least one coordinate")]
    EmptyBlock(BlockId),

    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("edge ({worker}, {block}) is not in the topology")]
    NotNeighbor { worker: WorkerId, block: BlockId },

    #[error("unknown block {0}")]
    UnknownBlock(BlockId),

    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),

    #[error("message variant {got} not valid at block {block} (expected {expected})")]
    UnexpectedMessage {
        got: &'static str,
        expected: &'static str,
        block: BlockId,
    },

    #[error("version history for block {block} holds {capacity} entries but the delay model needs {needed} (misconfigured history depth)")]
    HistoryUnderflow {
        block: BlockId,
        capacity: usize,
        needed: usize,
    },

    #[error("observed staleness {observed} on edge ({worker}, {block}) exceeded the kill threshold {threshold}")]
    StalenessExceeded {
        worker: WorkerId,
        block: BlockId,
        observed: u64,
        threshold: u64,
    },

    #[error("objective diverged (non-finite) at event {event}; last good snapshot retained")]
    Diverged { event: u64 },

    #[error("snapshot incomplete: missing entry for edge ({worker}, {block})")]
    IncompleteSnapshot { worker: WorkerId, block: BlockId },

    #[error("schema mismatch in {path}: expected {expected}, found {found}")]
    SchemaMismatch {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("worker thread panicked")]
    ThreadPanic,

    #[error("replay mismatch at stamp {stamp}: {detail}")]
    ReplayMismatch { stamp: u64, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by the environment (missing files, bad bytes)
    /// rather than by solver state or configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Json { .. })
    }

    /// True for failures of a running solve: numerical divergence or a
    /// staleness kill, as opposed to a rejected configuration.
    pub fn is_run_failure(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::StalenessExceeded { .. } | Error::NonFinite(_)
        )
    }
}
