//! The Pipelet node: message and timer types shared by every simulated
//! process, and the honest state machine in [`node`].
//!
//! Handlers mutate a node in place and return a [`Transition`] listing the
//! messages to send, timers to arm and protocol events for the trace. Given
//! the same state, input and time, a handler always returns the same
//! transition.

mod node;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use node::{Mempool, NodeParams, NodeState};

use crate::chain::{Block, Digest};
use crate::crypto::{AggregateSignature, Certificate, NodeId, Signature};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Proposal {
        block: Block,
        parent_cert: Certificate,
        sig: Signature,
    },
    Vote {
        block_hash: Digest,
        sig: Signature,
    },
    Timeout {
        next_epoch: u64,
        sigs: AggregateSignature,
    },
    /// Notarized blocks, parents before children, each with its certificate.
    Sync {
        chains: Vec<(Block, Certificate)>,
    },
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::Proposal { .. } => MsgKind::Proposal,
            Message::Vote { .. } => MsgKind::Vote,
            Message::Timeout { .. } => MsgKind::Timeout,
            Message::Sync { .. } => MsgKind::Sync,
        }
    }

    /// Block referenced by the message, with its sequence number when the
    /// block itself is carried.
    pub fn block_ref(&self) -> (Option<Digest>, Option<u64>) {
        match self {
            Message::Proposal { block, .. } => (Some(block.hash()), Some(block.seq)),
            Message::Vote { block_hash, .. } => (Some(*block_hash), None),
            Message::Timeout { .. } => (None, None),
            Message::Sync { chains } => match chains.last() {
                Some((b, _)) => (Some(b.hash()), Some(b.seq)),
                None => (None, None),
            },
        }
    }
}

/// Message and timer labels used in trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Proposal,
    Vote,
    Timeout,
    Sync,
    EpochTimer,
    NotarizationTimer,
    ReleaseTimer,
    EpochClock,
}

impl MsgKind {
    pub const MESSAGES: [MsgKind; 4] = [
        MsgKind::Proposal,
        MsgKind::Vote,
        MsgKind::Timeout,
        MsgKind::Sync,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgKind::Proposal => "proposal",
            MsgKind::Vote => "vote",
            MsgKind::Timeout => "timeout",
            MsgKind::Sync => "sync",
            MsgKind::EpochTimer => "epoch_timer",
            MsgKind::NotarizationTimer => "notarization_timer",
            MsgKind::ReleaseTimer => "release_timer",
            MsgKind::EpochClock => "epoch_clock",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    /// Every other node; the engine also loops the message back to the
    /// sender without putting it on the network.
    Broadcast,
    Node(NodeId),
}

/// Timers are tagged so that firings made stale by a reset can be dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimerKind {
    /// 1sec after entering `epoch`.
    Epoch { epoch: u64 },
    /// 1min after the `generation`-th reset.
    Notarization { generation: u64 },
    /// Scheduled release of a withheld certificate (adversaries only).
    Release { epoch: u64 },
    /// Clock-driven epoch boundary (baselines).
    EpochClock { epoch: u64 },
}

impl TimerKind {
    pub fn label(&self) -> MsgKind {
        match self {
            TimerKind::Epoch { .. } => MsgKind::EpochTimer,
            TimerKind::Notarization { .. } => MsgKind::NotarizationTimer,
            TimerKind::Release { .. } => MsgKind::ReleaseTimer,
            TimerKind::EpochClock { .. } => MsgKind::EpochClock,
        }
    }

    /// Timers sharing a slot replace each other.
    pub fn slot(&self) -> u8 {
        match self {
            TimerKind::Epoch { .. } => 0,
            TimerKind::Notarization { .. } => 1,
            TimerKind::Release { .. } => 2,
            TimerKind::EpochClock { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub kind: TimerKind,
    pub at: Time,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolEvent {
    Notarized {
        block: Digest,
        epoch: u64,
        seq: u64,
        len: u64,
    },
    Finalized {
        block: Digest,
        epoch: u64,
        seq: u64,
        len: u64,
    },
    EpochAdvanced {
        epoch: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transition {
    pub outbox: Vec<(Dest, Arc<Message>)>,
    pub timers: Vec<TimerRequest>,
    pub events: Vec<ProtocolEvent>,
}

impl Transition {
    pub fn send(&mut self, dest: Dest, msg: Message) {
        self.outbox.push((dest, Arc::new(msg)));
    }

    pub fn timer(&mut self, kind: TimerKind, at: Time) {
        self.timers.push(TimerRequest { kind, at });
    }

    pub fn is_empty(&self) -> bool {
        self.outbox.is_empty() && self.timers.is_empty() && self.events.is_empty()
    }

    pub fn extend(&mut self, other: Transition) {
        self.outbox.extend(other.outbox);
        self.timers.extend(other.timers);
        self.events.extend(other.events);
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.outbox.iter().map(|(_, m)| m.as_ref())
    }
}

#[derive(Debug, Clone)]
pub enum Input {
    Start,
    Message { from: NodeId, msg: Arc<Message> },
    Timer(TimerKind),
}

/// Summary of a node's view at the end of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub epoch: u64,
    pub longest_len: u64,
    pub finalized_len: u64,
    pub finalized_tip: Digest,
}

/// Anything the simulation engine can drive.
pub trait Process: Send {
    fn id(&self) -> NodeId;
    fn step(&mut self, input: Input, now: Time) -> Transition;
    fn epoch(&self) -> u64;
    fn snapshot(&self) -> NodeSnapshot;
}

/// Round-robin proposer for epoch `e` among nodes `1..=n`.
pub fn eligible_proposer(epoch: u64, n: usize) -> NodeId {
    assert!(n >= 1);
    let n = n as u64;
    NodeId(((epoch + n - 1) % n + 1) as u32)
}
