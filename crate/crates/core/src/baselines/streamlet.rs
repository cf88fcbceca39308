use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::{finalize_consecutive_epochs, Echo, Orphans};
use crate::chain::{quorum, Block, BlockStore, Digest};
use crate::crypto::{
    proposal_payload, vote_payload, AggregateSignature, Certificate, KeyPair, NodeId, Pki,
    Signature,
};
use crate::protocol::{
    eligible_proposer, Dest, Input, Mempool, Message, NodeParams, NodeSnapshot, Process,
    ProtocolEvent, TimerKind, Transition,
};
use crate::time::Time;

/// Streamlet with clock-driven epochs of one 1sec each. The leader of an
/// epoch proposes once at its start; everyone broadcasts a vote for the
/// first valid proposal of the current epoch.
#[derive(Debug, Clone)]
pub struct StreamletNode {
    pub id: NodeId,
    params: NodeParams,
    key: KeyPair,
    pki: Arc<Pki>,
    pub epoch: u64,
    voted_epoch: u64,
    pub store: BlockStore,
    pub notarized: BTreeSet<Digest>,
    pub finalized: BTreeSet<Digest>,
    votes: HashMap<Digest, AggregateSignature>,
    longest_len: u64,
    longest: BTreeSet<Digest>,
    finalized_len: u64,
    finalized_tip: Digest,
    echo: Echo,
    orphans: Orphans,
    mempool: Mempool,
}

impl StreamletNode {
    pub fn init(id: NodeId, params: NodeParams, pki: Arc<Pki>, _now: Time) -> StreamletNode {
        let key = pki.key(id).expect("registered").clone();
        let store = BlockStore::new();
        let g = store.genesis_hash();
        StreamletNode {
            id,
            params,
            key,
            pki,
            epoch: 0,
            voted_epoch: 0,
            store,
            notarized: [g].into_iter().collect(),
            finalized: [g].into_iter().collect(),
            votes: HashMap::new(),
            longest_len: 0,
            longest: [g].into_iter().collect(),
            finalized_len: 0,
            finalized_tip: g,
            echo: Echo::default(),
            orphans: Orphans::default(),
            mempool: Mempool::new(id, params.batch, params.tx_size),
        }
    }

    fn epoch_start(&self, epoch: u64) -> Time {
        self.params.timing.sec * (epoch - 1)
    }

    fn enter_epoch(&mut self, epoch: u64, out: &mut Transition) {
        self.epoch = epoch;
        out.events.push(ProtocolEvent::EpochAdvanced { epoch });
        out.timer(
            TimerKind::EpochClock { epoch: epoch + 1 },
            self.epoch_start(epoch + 1),
        );
        if eligible_proposer(epoch, self.params.n) == self.id {
            self.propose(out);
        }
    }

    fn propose(&mut self, out: &mut Transition) {
        let parent = *self.longest.iter().next().expect("non-empty");
        let parent_cert = if parent == self.store.genesis_hash() {
            Certificate::genesis()
        } else {
            Certificate {
                block_hash: parent,
                agg: self.votes[&parent].clone(),
            }
        };
        let block = Block::new(self.epoch, 1, self.mempool.take_batch(), parent);
        let h = block.hash();
        let msg = Message::Proposal {
            block: block.clone(),
            parent_cert,
            sig: self.key.sign(&proposal_payload(&h)),
        };
        self.echo.first_sight(&msg);
        out.send(Dest::Broadcast, msg);
        self.accept_block(self.id, block, out);
    }

    fn accept_block(&mut self, from: NodeId, block: Block, out: &mut Transition) {
        for (from, h) in self.orphans.insert(&mut self.store, from, block) {
            self.maybe_vote(from, &h, out);
            self.check_notarized(&h, out);
        }
    }

    fn maybe_vote(&mut self, from: NodeId, h: &Digest, out: &mut Transition) {
        let b = self.store.get(h).expect("stored");
        if b.epoch != self.epoch
            || self.voted_epoch >= self.epoch
            || from != eligible_proposer(b.epoch, self.params.n)
            || !self.longest.contains(&b.parent_hash)
        {
            return;
        }
        self.voted_epoch = self.epoch;
        let sig = self.key.sign(&vote_payload(h));
        let msg = Message::Vote {
            block_hash: *h,
            sig: sig.clone(),
        };
        self.echo.first_sight(&msg);
        out.send(Dest::Broadcast, msg);
        self.add_vote(*h, &sig);
    }

    fn add_vote(&mut self, h: Digest, sig: &Signature) {
        let acc = self
            .votes
            .entry(h)
            .or_insert_with(|| AggregateSignature::empty(sig.payload_digest));
        let _ = acc.add(sig);
    }

    fn check_notarized(&mut self, h: &Digest, out: &mut Transition) {
        if self.notarized.contains(h) || !self.store.contains(h) {
            return;
        }
        let enough = self
            .votes
            .get(h)
            .is_some_and(|a| a.len() >= quorum(self.params.n));
        if !enough {
            return;
        }
        self.notarized.insert(*h);
        let len = self.store.height(h).expect("stored");
        if len > self.longest_len {
            self.longest_len = len;
            self.longest.clear();
        }
        if len == self.longest_len {
            self.longest.insert(*h);
        }
        let b = self.store.get(h).expect("stored");
        out.events.push(ProtocolEvent::Notarized {
            block: *h,
            epoch: b.epoch,
            seq: b.seq,
            len,
        });
        let newly =
            finalize_consecutive_epochs(&self.store, &self.notarized, &mut self.finalized, h);
        for d in newly {
            let b = self.store.get(&d).expect("stored");
            let len = self.store.height(&d).expect("stored");
            if len > self.finalized_len {
                self.finalized_len = len;
                self.finalized_tip = d;
            }
            out.events.push(ProtocolEvent::Finalized {
                block: d,
                epoch: b.epoch,
                seq: b.seq,
                len,
            });
        }
    }

    fn on_message(&mut self, msg: &Arc<Message>) -> Transition {
        let mut out = Transition::default();
        if !self.echo.first_sight(msg) {
            return out;
        }
        out.outbox.push((Dest::Broadcast, msg.clone()));
        match msg.as_ref() {
            Message::Proposal { block, sig, .. } => {
                let h = block.hash();
                let author = eligible_proposer(block.epoch, self.params.n);
                if block.epoch == 0
                    || sig.signer != author
                    || !self.pki.verify_signer(sig, &proposal_payload(&h))
                {
                    return out;
                }
                self.accept_block(author, block.clone(), &mut out);
            }
            Message::Vote { block_hash, sig } => {
                if self.pki.verify_signer(sig, &vote_payload(block_hash)) {
                    self.add_vote(*block_hash, sig);
                    self.check_notarized(block_hash, &mut out);
                }
            }
            Message::Timeout { .. } | Message::Sync { .. } => {}
        }
        out
    }
}

impl Process for StreamletNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn step(&mut self, input: Input, _now: Time) -> Transition {
        match input {
            Input::Start => {
                let mut out = Transition::default();
                self.enter_epoch(1, &mut out);
                out
            }
            Input::Message { msg, .. } => self.on_message(&msg),
            Input::Timer(TimerKind::EpochClock { epoch }) if epoch > self.epoch => {
                let mut out = Transition::default();
                self.enter_epoch(epoch, &mut out);
                out
            }
            Input::Timer(_) => Transition::default(),
        }
    }

    fn epoch(&self) -> u64 {
        self.epoch
    }

    fn snapshot(&self) -> NodeSnapshot {
        NodeSnapshot {
            node: self.id,
            epoch: self.epoch,
            longest_len: self.longest_len,
            finalized_len: self.finalized_len,
            finalized_tip: self.finalized_tip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timing;

    fn nodes(n: usize) -> Vec<StreamletNode> {
        let pki = Arc::new(Pki::new(n));
        let params = NodeParams::new(n, Timing::default());
        (1..=n as u32)
            .map(|i| StreamletNode::init(NodeId(i), params, pki.clone(), Time::ZERO))
            .collect()
    }

    #[test]
    fn leader_proposes_and_votes_at_epoch_start() {
        let mut ns = nodes(5);
        let tr = ns[0].step(Input::Start, Time::ZERO);
        let kinds: Vec<_> = tr.messages().map(|m| m.kind()).collect();
        use crate::protocol::MsgKind::*;
        assert_eq!(kinds, vec![Proposal, Vote]);
        assert!(ns[1].step(Input::Start, Time::ZERO).outbox.is_empty());
    }

    #[test]
    fn echo_once() {
        let mut ns = nodes(5);
        let tr = ns[0].step(Input::Start, Time::ZERO);
        let prop = tr.outbox[0].1.clone();
        ns[1].step(Input::Start, Time::ZERO);
        let first = ns[1].step(
            Input::Message {
                from: NodeId(1),
                msg: prop.clone(),
            },
            Time::from_units(0.5),
        );
        // echo plus own vote
        assert_eq!(first.outbox.len(), 2);
        let again = ns[1].step(
            Input::Message {
                from: NodeId(3),
                msg: prop,
            },
            Time::from_units(0.6),
        );
        assert!(again.is_empty());
    }
}
