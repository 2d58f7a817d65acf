//! Wire messages between workers and block servers.
//!
//! The enum shape guarantees a payload exists exactly on the variants that
//! carry one; edge membership is checked where a message is received, since
//! only the receiving side holds the topology.

use serde::{Deserialize, Serialize};

use crate::block::BlockVector;
use crate::topology::{BlockId, WorkerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    /// Full aggregation payload w = rho * x + y for one edge.
    PushW {
        sender: WorkerId,
        block: BlockId,
        payload: BlockVector,
        /// Sender's epoch when the payload was produced.
        epoch: u64,
    },
    /// Increment of w since the sender's last transmitted push on this edge.
    PushDelta {
        sender: WorkerId,
        block: BlockId,
        payload: BlockVector,
        epoch: u64,
    },
    /// Worker asks for the served copy of a block.
    PullRequest {
        sender: WorkerId,
        block: BlockId,
        epoch: u64,
    },
    /// Served copy of a block, tagged with the server-side version that was
    /// read so the receiver can account staleness.
    PullReply {
        block: BlockId,
        payload: BlockVector,
        version: u64,
    },
}

impl Message {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Message::PushW { .. } => "push_w",
            Message::PushDelta { .. } => "push_delta",
            Message::PullRequest { .. } => "pull_request",
            Message::PullReply { .. } => "pull_reply",
        }
    }

    pub fn block(&self) -> BlockId {
        match self {
            Message::PushW { block, .. }
            | Message::PushDelta { block, .. }
            | Message::PullRequest { block, .. }
            | Message::PullReply { block, .. } => *block,
        }
    }

    pub fn payload(&self) -> Option<&BlockVector> {
        match self {
            Message::PushW { payload, .. }
            | Message::PushDelta { payload, .. }
            | Message::PullReply { payload, .. } => Some(payload),
            Message::PullRequest { .. } => None,
        }
    }

    /// Originating worker; replies travel server-to-worker and have none.
    pub fn sender(&self) -> Option<WorkerId> {
        match self {
            Message::PushW { sender, .. }
            | Message::PushDelta { sender, .. }
            | Message::PullRequest { sender, .. } => Some(*sender),
            Message::PullReply { .. } => None,
        }
    }

    /// Sender's epoch at production time, where the variant records one.
    pub fn epoch(&self) -> Option<u64> {
        match self {
            Message::PushW { epoch, .. }
            | Message::PushDelta { epoch, .. }
            | Message::PullRequest { epoch, .. } => Some(*epoch),
            Message::PullReply { .. } => None,
        }
    }
}
