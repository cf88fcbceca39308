use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::{Echo, Orphans};
use crate::chain::{finalize_candidates, quorum, Block, BlockStore, Digest};
use crate::crypto::{
    proposal_payload, timeout_payload, vote_payload, AggregateSignature, Certificate, KeyPair,
    NodeId, Pki, Signature,
};
use crate::protocol::{
    eligible_proposer, Dest, Input, Mempool, Message, NodeParams, NodeSnapshot, Process,
    ProtocolEvent, TimerKind, Transition,
};
use crate::time::Time;

/// PaLa-style stable proposer. Votes and epoch-change messages are
/// broadcast and echoed; a node extends its freshest notarized chain,
/// ranked by (tip epoch, length). Timer constants are shared with Pipelet.
#[derive(Debug, Clone)]
pub struct PalaNode {
    pub id: NodeId,
    params: NodeParams,
    key: KeyPair,
    pki: Arc<Pki>,
    pub epoch: u64,
    seq: u64,
    epoch_timer_start: Time,
    notarization_generation: u64,
    pub store: BlockStore,
    pub notarized: BTreeSet<Digest>,
    pub finalized: BTreeSet<Digest>,
    votes: HashMap<Digest, AggregateSignature>,
    timeouts: BTreeMap<u64, AggregateSignature>,
    /// Freshest notarized tip and its rank.
    freshest: Digest,
    freshest_rank: (u64, u64),
    longest_len: u64,
    finalized_len: u64,
    finalized_tip: Digest,
    last_proposed: Option<Digest>,
    echo: Echo,
    orphans: Orphans,
    mempool: Mempool,
}

impl PalaNode {
    pub fn init(id: NodeId, params: NodeParams, pki: Arc<Pki>, now: Time) -> PalaNode {
        let key = pki.key(id).expect("registered").clone();
        let store = BlockStore::new();
        let g = store.genesis_hash();
        PalaNode {
            id,
            params,
            key,
            pki,
            epoch: 1,
            seq: 1,
            epoch_timer_start: now,
            notarization_generation: 0,
            store,
            notarized: [g].into_iter().collect(),
            finalized: [g].into_iter().collect(),
            votes: HashMap::new(),
            timeouts: BTreeMap::new(),
            freshest: g,
            freshest_rank: (0, 0),
            longest_len: 0,
            finalized_len: 0,
            finalized_tip: g,
            last_proposed: None,
            echo: Echo::default(),
            orphans: Orphans::default(),
            mempool: Mempool::new(id, params.batch, params.tx_size),
        }
    }

    fn rank(&self, h: &Digest) -> (u64, u64) {
        let b = self.store.get(h).expect("stored");
        (b.epoch, self.store.height(h).expect("stored"))
    }

    fn is_leader(&self) -> bool {
        eligible_proposer(self.epoch, self.params.n) == self.id
    }

    fn reset_notarization_timer(&mut self, now: Time, out: &mut Transition) {
        self.notarization_generation += 1;
        out.timer(
            TimerKind::Notarization {
                generation: self.notarization_generation,
            },
            now + self.params.timing.min,
        );
    }

    fn enter_epoch(&mut self, epoch: u64, now: Time, out: &mut Transition) {
        self.epoch = epoch;
        self.seq = 1;
        self.epoch_timer_start = now;
        out.timer(TimerKind::Epoch { epoch }, now + self.params.timing.sec);
        self.reset_notarization_timer(now, out);
        self.timeouts = self.timeouts.split_off(&(epoch + 1));
        out.events.push(ProtocolEvent::EpochAdvanced { epoch });
    }

    fn propose(&mut self, out: &mut Transition) {
        let parent = self.freshest;
        let parent_cert = if parent == self.store.genesis_hash() {
            Certificate::genesis()
        } else {
            Certificate {
                block_hash: parent,
                agg: self.votes[&parent].clone(),
            }
        };
        let block = Block::new(self.epoch, self.seq, self.mempool.take_batch(), parent);
        let h = block.hash();
        self.seq += 1;
        self.last_proposed = Some(h);
        let msg = Message::Proposal {
            block: block.clone(),
            parent_cert,
            sig: self.key.sign(&proposal_payload(&h)),
        };
        self.echo.first_sight(&msg);
        out.send(Dest::Broadcast, msg);
        self.store
            .insert(block)
            .expect("parent is the freshest tip");
        self.cast_vote(h, out);
    }

    fn cast_vote(&mut self, h: Digest, out: &mut Transition) {
        let sig = self.key.sign(&vote_payload(&h));
        let msg = Message::Vote {
            block_hash: h,
            sig: sig.clone(),
        };
        self.echo.first_sight(&msg);
        out.send(Dest::Broadcast, msg);
        self.add_vote(h, &sig);
    }

    fn accept_block(&mut self, from: NodeId, block: Block, now: Time, out: &mut Transition) {
        for (from, h) in self.orphans.insert(&mut self.store, from, block) {
            self.maybe_vote(from, &h, out);
            self.check_notarized(&h, now, out);
        }
    }

    fn maybe_vote(&mut self, from: NodeId, h: &Digest, out: &mut Transition) {
        let b = self.store.get(h).expect("stored");
        if from == self.id
            || b.epoch != self.epoch
            || b.seq < self.seq
            || from != eligible_proposer(b.epoch, self.params.n)
            || b.parent_hash != self.freshest
        {
            return;
        }
        self.seq = b.seq + 1;
        self.cast_vote(*h, out);
    }

    fn add_vote(&mut self, h: Digest, sig: &Signature) {
        let acc = self
            .votes
            .entry(h)
            .or_insert_with(|| AggregateSignature::empty(sig.payload_digest));
        let _ = acc.add(sig);
    }

    fn check_notarized(&mut self, h: &Digest, now: Time, out: &mut Transition) {
        if self.notarized.contains(h) || !self.store.contains(h) {
            return;
        }
        if !self
            .votes
            .get(h)
            .is_some_and(|a| a.len() >= quorum(self.params.n))
        {
            return;
        }
        self.notarized.insert(*h);
        let len = self.store.height(h).expect("stored");
        let (epoch, seq) = {
            let b = self.store.get(h).expect("stored");
            (b.epoch, b.seq)
        };
        out.events.push(ProtocolEvent::Notarized {
            block: *h,
            epoch,
            seq,
            len,
        });
        self.longest_len = self.longest_len.max(len);
        let rank = self.rank(h);
        if rank > self.freshest_rank {
            self.freshest = *h;
            self.freshest_rank = rank;
            self.reset_notarization_timer(now, out);
        }
        let newly = finalize_candidates(&self.store, &self.notarized, &mut self.finalized, [h])
            .expect("stored");
        for d in newly {
            let fb = self.store.get(&d).expect("stored");
            if fb.is_genesis() {
                continue;
            }
            let flen = self.store.height(&d).expect("stored");
            if flen > self.finalized_len {
                self.finalized_len = flen;
                self.finalized_tip = d;
            }
            out.events.push(ProtocolEvent::Finalized {
                block: d,
                epoch: fb.epoch,
                seq: fb.seq,
                len: flen,
            });
        }
        // the stable proposer keeps going once its latest block is notarized
        if self.last_proposed == Some(*h)
            && self.epoch == epoch
            && self.freshest == *h
            && now - self.epoch_timer_start >= self.params.timing.sec
        {
            self.propose(out);
        }
    }

    fn on_timeout(
        &mut self,
        next_epoch: u64,
        sigs: &AggregateSignature,
        now: Time,
        out: &mut Transition,
    ) {
        if next_epoch <= self.epoch
            || !self
                .pki
                .verify_aggregate(sigs, &timeout_payload(next_epoch))
        {
            return;
        }
        let acc = self
            .timeouts
            .entry(next_epoch)
            .or_insert_with(|| AggregateSignature::empty(sigs.payload_digest));
        let _ = acc.merge(sigs);
        if acc.len() >= quorum(self.params.n) {
            self.enter_epoch(next_epoch, now, out);
        }
    }

    fn on_message(&mut self, msg: &Arc<Message>, now: Time) -> Transition {
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
                self.accept_block(author, block.clone(), now, &mut out);
            }
            Message::Vote { block_hash, sig } => {
                if self.pki.verify_signer(sig, &vote_payload(block_hash)) {
                    self.add_vote(*block_hash, sig);
                    self.check_notarized(block_hash, now, &mut out);
                }
            }
            Message::Timeout { next_epoch, sigs } => {
                self.on_timeout(*next_epoch, sigs, now, &mut out);
            }
            Message::Sync { .. } => {}
        }
        out
    }

    fn on_notarization_timer(&mut self, generation: u64, now: Time) -> Transition {
        let mut out = Transition::default();
        if generation != self.notarization_generation {
            return out;
        }
        let next_epoch = self.epoch + 1;
        let sig = self.key.sign(&timeout_payload(next_epoch));
        let agg = AggregateSignature::from_signature(&sig);
        let msg = Message::Timeout {
            next_epoch,
            sigs: agg.clone(),
        };
        self.echo.first_sight(&msg);
        out.send(Dest::Broadcast, msg);
        self.reset_notarization_timer(now, &mut out);
        self.on_timeout(next_epoch, &agg, now, &mut out);
        out
    }
}

impl Process for PalaNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn step(&mut self, input: Input, now: Time) -> Transition {
        match input {
            Input::Start => {
                let mut out = Transition::default();
                out.timer(TimerKind::Epoch { epoch: 1 }, now + self.params.timing.sec);
                self.reset_notarization_timer(now, &mut out);
                out
            }
            Input::Message { msg, .. } => self.on_message(&msg, now),
            Input::Timer(TimerKind::Epoch { epoch }) => {
                let mut out = Transition::default();
                if epoch == self.epoch && self.is_leader() {
                    self.propose(&mut out);
                }
                out
            }
            Input::Timer(TimerKind::Notarization { generation }) => {
                self.on_notarization_timer(generation, now)
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
