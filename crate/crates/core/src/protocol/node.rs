use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::chain::{classify, finalize_candidates, Block, BlockKind, BlockStore, Digest};
use crate::crypto::{
    proposal_payload, timeout_payload, vote_payload, AggregateSignature, Certificate, KeyPair,
    NodeId, Pki, Signature,
};
use crate::time::{Time, Timing};

use super::{
    eligible_proposer, Dest, Input, Message, NodeSnapshot, Process, ProtocolEvent, TimerKind,
    Transition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeParams {
    pub n: usize,
    pub timing: Timing,
    /// Transactions per proposed block.
    pub batch: usize,
    /// Bytes per synthetic transaction.
    pub tx_size: usize,
}

impl NodeParams {
    pub fn new(n: usize, timing: Timing) -> NodeParams {
        NodeParams {
            n,
            timing,
            batch: 1,
            tx_size: 16,
        }
    }
}

/// Synthetic transaction source: fixed-size payloads tagged with the owner
/// and a running counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mempool {
    owner: NodeId,
    next: u64,
    batch: usize,
    tx_size: usize,
}

impl Mempool {
    pub fn new(owner: NodeId, batch: usize, tx_size: usize) -> Mempool {
        Mempool {
            owner,
            next: 0,
            batch,
            tx_size: tx_size.max(12),
        }
    }

    pub fn take_batch(&mut self) -> Vec<Vec<u8>> {
        (0..self.batch)
            .map(|_| {
                let mut tx = vec![0u8; self.tx_size];
                tx[..4].copy_from_slice(&self.owner.0.to_be_bytes());
                tx[4..12].copy_from_slice(&self.next.to_be_bytes());
                self.next += 1;
                tx
            })
            .collect()
    }

    pub fn pending_counter(&self) -> u64 {
        self.next
    }
}

/// One honest Pipelet participant. Every node runs both the proposer and the
/// voter role and keeps both timers.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub params: NodeParams,
    key: KeyPair,
    pki: Arc<Pki>,

    pub epoch: u64,
    pub seq: u64,
    pub epoch_timer_start: Time,
    pub notarization_timer_start: Time,
    notarization_generation: u64,

    pub timeout_sigs: BTreeMap<u64, AggregateSignature>,
    pub votes: HashMap<Digest, AggregateSignature>,
    pub notarized: BTreeSet<Digest>,
    pub finalized: BTreeSet<Digest>,
    pub synced_blocks: BTreeSet<Digest>,
    pub store: BlockStore,
    longest_len: u64,
    longest: BTreeSet<Digest>,
    finalized_len: u64,
    finalized_tip: Digest,
    pub mempool: Mempool,
}

impl PartialEq for NodeState {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.epoch == other.epoch
            && self.seq == other.seq
            && self.epoch_timer_start == other.epoch_timer_start
            && self.notarization_timer_start == other.notarization_timer_start
            && self.notarization_generation == other.notarization_generation
            && self.timeout_sigs == other.timeout_sigs
            && self.votes == other.votes
            && self.notarized == other.notarized
            && self.finalized == other.finalized
            && self.synced_blocks == other.synced_blocks
            && self.longest == other.longest
            && self.mempool == other.mempool
    }
}

impl NodeState {
    pub fn init(id: NodeId, params: NodeParams, pki: Arc<Pki>, now: Time) -> NodeState {
        assert!(
            id.0 >= 1 && id.0 as usize <= params.n,
            "node id {id} outside 1..={}",
            params.n
        );
        let key = pki.key(id).expect("node id registered").clone();
        let store = BlockStore::new();
        let g = store.genesis_hash();
        NodeState {
            id,
            params,
            key,
            pki,
            epoch: 1,
            seq: 1,
            epoch_timer_start: now,
            notarization_timer_start: now,
            notarization_generation: 0,
            timeout_sigs: BTreeMap::new(),
            votes: HashMap::new(),
            notarized: [g].into_iter().collect(),
            finalized: [g].into_iter().collect(),
            synced_blocks: BTreeSet::new(),
            store,
            longest_len: 0,
            longest: [g].into_iter().collect(),
            finalized_len: 0,
            finalized_tip: g,
            mempool: Mempool::new(id, params.batch, params.tx_size),
        }
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn pki(&self) -> &Pki {
        &self.pki
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// Tips of the longest notarized chains.
    pub fn longest(&self) -> &BTreeSet<Digest> {
        &self.longest
    }

    pub fn longest_len(&self) -> u64 {
        self.longest_len
    }

    pub fn finalized_len(&self) -> u64 {
        self.finalized_len
    }

    pub fn is_eligible(&self) -> bool {
        eligible_proposer(self.epoch, self.params.n) == self.id
    }

    /// Arms both timers for the initial epoch.
    pub fn start(&mut self, now: Time) -> Transition {
        let mut out = Transition::default();
        self.epoch_timer_start = now;
        out.timer(
            TimerKind::Epoch { epoch: self.epoch },
            now + self.params.timing.sec,
        );
        self.reset_notarization_timer(now, &mut out);
        out
    }

    pub fn certificate_for(&self, h: &Digest) -> Option<Certificate> {
        if *h == self.store.genesis_hash() {
            return Some(Certificate::genesis());
        }
        if !self.notarized.contains(h) {
            return None;
        }
        self.votes.get(h).map(|agg| Certificate {
            block_hash: *h,
            agg: agg.clone(),
        })
    }

    fn reset_notarization_timer(&mut self, now: Time, out: &mut Transition) {
        self.notarization_generation += 1;
        self.notarization_timer_start = now;
        out.timer(
            TimerKind::Notarization {
                generation: self.notarization_generation,
            },
            now + self.params.timing.min,
        );
    }

    /// Marks `h` notarized, merging `cert` into the vote accumulator. Returns
    /// whether `h` was new.
    fn notarize(
        &mut self,
        h: Digest,
        cert: Option<&AggregateSignature>,
        out: &mut Transition,
    ) -> bool {
        if let Some(agg) = cert {
            match self.votes.get_mut(&h) {
                Some(acc) => {
                    let _ = acc.merge(agg);
                }
                None => {
                    self.votes.insert(h, agg.clone());
                }
            }
        }
        if !self.notarized.insert(h) {
            return false;
        }
        let len = self.store.height(&h).expect("notarized blocks are stored");
        if len > self.longest_len {
            self.longest_len = len;
            self.longest.clear();
            self.longest.insert(h);
        } else if len == self.longest_len {
            self.longest.insert(h);
        }
        let b = self.store.get(&h).expect("stored");
        out.events.push(ProtocolEvent::Notarized {
            block: h,
            epoch: b.epoch,
            seq: b.seq,
            len,
        });
        true
    }

    /// Timer reset and finalization after a batch of notarizations.
    fn after_notarization(
        &mut self,
        prev_longest: u64,
        fresh: &[Digest],
        now: Time,
        out: &mut Transition,
    ) {
        if fresh.is_empty() {
            return;
        }
        if self.longest_len > prev_longest {
            self.reset_notarization_timer(now, out);
        }
        let newly = finalize_candidates(&self.store, &self.notarized, &mut self.finalized, fresh)
            .expect("notarized blocks resolve in the store");
        for h in newly {
            let b = self.store.get(&h).expect("stored");
            if b.is_genesis() {
                continue;
            }
            let len = self.store.height(&h).expect("stored");
            if len > self.finalized_len {
                self.finalized_len = len;
                self.finalized_tip = h;
            }
            out.events.push(ProtocolEvent::Finalized {
                block: h,
                epoch: b.epoch,
                seq: b.seq,
                len,
            });
        }
    }

    fn advance_epoch(&mut self, epoch: u64, now: Time, out: &mut Transition) {
        self.epoch = epoch;
        self.seq = 1;
        self.epoch_timer_start = now;
        out.timer(TimerKind::Epoch { epoch }, now + self.params.timing.sec);
        self.reset_notarization_timer(now, out);
        self.timeout_sigs = self.timeout_sigs.split_off(&(epoch + 1));
        out.events.push(ProtocolEvent::EpochAdvanced { epoch });
    }

    /// Proposes the next block if this node is the eligible proposer.
    pub fn propose(&mut self, now: Time, out: &mut Transition) {
        if !self.is_eligible() {
            return;
        }
        let parent = *self.longest.iter().next().expect("longest is never empty");
        let parent_cert = self
            .certificate_for(&parent)
            .expect("longest blocks are notarized");
        let block = Block::new(self.epoch, self.seq, self.mempool.take_batch(), parent);
        let h = self
            .store
            .insert(block.clone())
            .expect("parent is a stored notarized block");
        let sig = self.key.sign(&proposal_payload(&h));
        out.send(
            Dest::Broadcast,
            Message::Proposal {
                block,
                parent_cert,
                sig,
            },
        );
        let own = self.key.sign(&vote_payload(&h));
        self.votes
            .insert(h, AggregateSignature::from_signature(&own));
        self.seq += 1;

        // A single-node network notarizes on its own vote.
        let payload = vote_payload(&h);
        if self
            .pki
            .verify_quorum(&self.votes[&h], &payload, self.params.n)
        {
            let prev = self.longest_len;
            if self.notarize(h, None, out) {
                self.after_notarization(prev, &[h], now, out);
            }
        }
    }

    pub fn on_vote(&mut self, block_hash: Digest, sig: &Signature, now: Time) -> Transition {
        let mut out = Transition::default();
        let payload = vote_payload(&block_hash);
        if !self.pki.verify_signer(sig, &payload) || !self.store.contains(&block_hash) {
            return out;
        }
        let acc = self
            .votes
            .entry(block_hash)
            .or_insert_with(|| AggregateSignature::empty(sig.payload_digest));
        if acc.add(sig).is_err() {
            return out;
        }
        if self.notarized.contains(&block_hash)
            || !self.pki.verify_quorum(acc, &payload, self.params.n)
        {
            return out;
        }
        let prev = self.longest_len;
        self.notarize(block_hash, None, &mut out);
        self.after_notarization(prev, &[block_hash], now, &mut out);
        let block_epoch = self.store.get(&block_hash).expect("stored").epoch;
        if now - self.epoch_timer_start > self.params.timing.sec && self.epoch == block_epoch {
            self.propose(now, &mut out);
        }
        out
    }

    pub fn on_proposal(
        &mut self,
        from: NodeId,
        block: &Block,
        parent_cert: &Certificate,
        sig: &Signature,
        now: Time,
    ) -> Transition {
        let mut out = Transition::default();
        if !self.pki.verify_certificate(parent_cert, self.params.n) {
            return out;
        }
        if !parent_cert.is_genesis() && self.store.contains(&parent_cert.block_hash) {
            let prev = self.longest_len;
            if self.notarize(parent_cert.block_hash, Some(&parent_cert.agg), &mut out) {
                self.after_notarization(prev, &[parent_cert.block_hash], now, &mut out);
            }
        }

        let h = block.hash();
        let sig_ok = sig.signer == from && self.pki.verify_signer(sig, &proposal_payload(&h));
        if !sig_ok || block.epoch == 0 || block.seq == 0 {
            return out;
        }
        if self.store.insert(block.clone()).is_err() {
            return out;
        }
        let parent = &block.parent_hash;
        let shape_ok = self
            .store
            .get(parent)
            .is_some_and(|p| classify(block, p) != BlockKind::Invalid);
        // |B'| = |P| + 1 holds by construction of the store's heights.
        if block.epoch == self.epoch
            && block.seq >= self.seq
            && from == eligible_proposer(self.epoch, self.params.n)
            && self.longest.contains(parent)
            && shape_ok
        {
            let vote = self.key.sign(&vote_payload(&h));
            out.send(
                Dest::Node(from),
                Message::Vote {
                    block_hash: h,
                    sig: vote,
                },
            );
            self.seq = block.seq + 1;
        }
        out
    }

    /// Notarized blocks on the longest chains that have not been synced yet,
    /// parents first.
    fn unsynced_chains(&self) -> Vec<(Block, Certificate)> {
        let mut taken: HashSet<Digest> = HashSet::new();
        let mut out = Vec::new();
        for tip in &self.longest {
            let mut segment = Vec::new();
            let mut cur = *tip;
            while cur != self.store.genesis_hash()
                && !self.synced_blocks.contains(&cur)
                && !taken.contains(&cur)
            {
                let Some(cert) = self.certificate_for(&cur) else {
                    break;
                };
                let b = self.store.get(&cur).expect("stored").clone();
                taken.insert(cur);
                cur = b.parent_hash;
                segment.push((b, cert));
            }
            segment.reverse();
            out.extend(segment);
        }
        out
    }

    pub fn on_timeout(
        &mut self,
        next_epoch: u64,
        sigs: &AggregateSignature,
        now: Time,
    ) -> Transition {
        let mut out = Transition::default();
        let payload = timeout_payload(next_epoch);
        if sigs.is_empty() || !self.pki.verify_aggregate(sigs, &payload) {
            return out;
        }

        let chains = self.unsynced_chains();
        if !chains.is_empty() {
            for (b, _) in &chains {
                self.synced_blocks.insert(b.hash());
            }
            out.send(Dest::Broadcast, Message::Sync { chains });
        }

        if next_epoch > self.epoch {
            let acc = self
                .timeout_sigs
                .entry(next_epoch)
                .or_insert_with(|| AggregateSignature::empty(sigs.payload_digest));
            let _ = acc.merge(sigs);
            if self.pki.verify_quorum(acc, &payload, self.params.n) {
                let agg = acc.clone();
                self.advance_epoch(next_epoch, now, &mut out);
                out.send(
                    Dest::Broadcast,
                    Message::Timeout {
                        next_epoch,
                        sigs: agg,
                    },
                );
            }
        }
        out
    }

    pub fn on_sync(&mut self, chains: &[(Block, Certificate)], now: Time) -> Transition {
        let mut out = Transition::default();
        let mut in_msg: HashMap<Digest, &Block> = HashMap::new();
        for (b, cert) in chains {
            let h = b.hash();
            if b.epoch == 0
                || b.seq == 0
                || cert.block_hash != h
                || cert.is_genesis()
                || !self.pki.verify_certificate(cert, self.params.n)
            {
                return out;
            }
            let parent = self
                .store
                .get(&b.parent_hash)
                .or_else(|| in_msg.get(&b.parent_hash).copied());
            match parent {
                Some(p) if classify(b, p) != BlockKind::Invalid => {}
                _ => return out,
            }
            in_msg.insert(h, b);
        }

        let prev = self.longest_len;
        let mut fresh = Vec::new();
        for (b, cert) in chains {
            let h = self
                .store
                .insert(b.clone())
                .expect("linkage verified above");
            if self.notarize(h, Some(&cert.agg), &mut out) {
                fresh.push(h);
            }
        }
        self.after_notarization(prev, &fresh, now, &mut out);
        out
    }

    pub fn on_epoch_timer(&mut self, epoch: u64, now: Time) -> Transition {
        let mut out = Transition::default();
        if epoch != self.epoch {
            return out;
        }
        self.propose(now, &mut out);
        out
    }

    pub fn on_notarization_timer(&mut self, generation: u64, now: Time) -> Transition {
        let mut out = Transition::default();
        if generation != self.notarization_generation {
            return out;
        }
        let next_epoch = self.epoch + 1;
        let sig = self.key.sign(&timeout_payload(next_epoch));
        out.send(
            Dest::Broadcast,
            Message::Timeout {
                next_epoch,
                sigs: AggregateSignature::from_signature(&sig),
            },
        );
        self.reset_notarization_timer(now, &mut out);
        out
    }

    pub fn on_message(&mut self, from: NodeId, msg: &Message, now: Time) -> Transition {
        match msg {
            Message::Proposal {
                block,
                parent_cert,
                sig,
            } => self.on_proposal(from, block, parent_cert, sig, now),
            Message::Vote { block_hash, sig } => self.on_vote(*block_hash, sig, now),
            Message::Timeout { next_epoch, sigs } => self.on_timeout(*next_epoch, sigs, now),
            Message::Sync { chains } => self.on_sync(chains, now),
        }
    }

    pub fn on_timer(&mut self, timer: TimerKind, now: Time) -> Transition {
        match timer {
            TimerKind::Epoch { epoch } => self.on_epoch_timer(epoch, now),
            TimerKind::Notarization { generation } => self.on_notarization_timer(generation, now),
            TimerKind::Release { .. } | TimerKind::EpochClock { .. } => Transition::default(),
        }
    }
}

impl Process for NodeState {
    fn id(&self) -> NodeId {
        self.id
    }

    fn step(&mut self, input: Input, now: Time) -> Transition {
        match input {
            Input::Start => self.start(now),
            Input::Message { from, msg } => self.on_message(from, &msg, now),
            Input::Timer(t) => self.on_timer(t, now),
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
    use crate::chain::{genesis_hash, quorum};
    use crate::crypto::aggregate;

    fn t(u: f64) -> Time {
        Time::from_units(u)
    }

    fn cluster(n: usize) -> (Arc<Pki>, Vec<NodeState>) {
        let pki = Arc::new(Pki::new(n));
        let params = NodeParams::new(n, Timing::default());
        let nodes = (1..=n as u32)
            .map(|i| NodeState::init(NodeId(i), params, pki.clone(), Time::ZERO))
            .collect();
        (pki, nodes)
    }

    fn timeout_agg(pki: &Pki, epoch: u64, signers: &[u32]) -> AggregateSignature {
        let sigs: Vec<_> = signers
            .iter()
            .map(|&i| pki.key(NodeId(i)).unwrap().sign(&timeout_payload(epoch)))
            .collect();
        aggregate(&sigs).unwrap()
    }

    fn proposals(tr: &Transition) -> Vec<(Block, Certificate, Signature)> {
        tr.messages()
            .filter_map(|m| match m {
                Message::Proposal {
                    block,
                    parent_cert,
                    sig,
                } => Some((block.clone(), parent_cert.clone(), sig.clone())),
                _ => None,
            })
            .collect()
    }

    fn votes(tr: &Transition) -> Vec<(Dest, Digest, Signature)> {
        tr.outbox
            .iter()
            .filter_map(|(d, m)| match m.as_ref() {
                Message::Vote { block_hash, sig } => Some((*d, *block_hash, sig.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn init_state() {
        let (pki, _) = cluster(10);
        let s = NodeState::init(
            NodeId(3),
            NodeParams::new(10, Timing::default()),
            pki.clone(),
            Time::ZERO,
        );
        assert_eq!((s.epoch, s.seq), (1, 1));
        assert_eq!(s.notarized, [genesis_hash()].into_iter().collect());
        assert_eq!(s.finalized, [genesis_hash()].into_iter().collect());
        assert!(s.votes.is_empty() && s.timeout_sigs.is_empty());
        let again = NodeState::init(
            NodeId(3),
            NodeParams::new(10, Timing::default()),
            pki,
            Time::ZERO,
        );
        assert_eq!(s, again);
    }

    #[test]
    fn timeout_quorum_advances_epoch_and_rebroadcasts() {
        let (pki, mut nodes) = cluster(4);
        let node = &mut nodes[1];
        let tr = node.on_timeout(2, &timeout_agg(&pki, 2, &[1, 3, 4]), t(40.0));
        assert_eq!((node.epoch, node.seq), (2, 1));
        assert_eq!(node.epoch_timer_start, t(40.0));
        assert_eq!(node.notarization_timer_start, t(40.0));
        let rebroadcast = tr.outbox.iter().any(|(d, m)| {
            *d == Dest::Broadcast
                && matches!(m.as_ref(), Message::Timeout { next_epoch: 2, sigs } if sigs.len() == 3)
        });
        assert!(rebroadcast);
        assert!(tr
            .events
            .contains(&ProtocolEvent::EpochAdvanced { epoch: 2 }));
        assert!(tr
            .timers
            .iter()
            .any(|r| r.kind == TimerKind::Epoch { epoch: 2 } && r.at == t(45.0)));
    }

    #[test]
    fn timeout_below_quorum_accumulates() {
        let (pki, mut nodes) = cluster(4);
        let node = &mut nodes[0];
        assert_eq!(quorum(4), 3);
        let tr = node.on_timeout(2, &timeout_agg(&pki, 2, &[3]), t(31.0));
        assert_eq!(node.epoch, 1);
        assert_eq!(node.timeout_sigs[&2].len(), 1);
        assert!(tr.outbox.is_empty());
        // the same signer again does not double count
        node.on_timeout(2, &timeout_agg(&pki, 2, &[3]), t(31.5));
        assert_eq!(node.timeout_sigs[&2].len(), 1);
        node.on_timeout(2, &timeout_agg(&pki, 2, &[2, 4]), t(32.0));
        assert_eq!(node.epoch, 2);
    }

    #[test]
    fn stale_timeout_epoch_not_accumulated_but_sync_runs() {
        let (pki, mut nodes) = cluster(4);
        let node = &mut nodes[0];
        node.on_timeout(2, &timeout_agg(&pki, 2, &[2, 3, 4]), t(31.0));
        assert_eq!(node.epoch, 2);
        // give the node a notarized non-genesis block so the sync step has content
        let b = Block::new(1, 1, vec![], genesis_hash());
        let h = node.store.insert(b).unwrap();
        let sigs: Vec<_> = [2, 3, 4]
            .iter()
            .map(|&i| pki.key(NodeId(i)).unwrap().sign(&vote_payload(&h)))
            .collect();
        let agg = aggregate(&sigs).unwrap();
        let mut scratch = Transition::default();
        node.notarize(h, Some(&agg), &mut scratch);

        let tr = node.on_timeout(1, &timeout_agg(&pki, 1, &[3]), t(33.0));
        assert!(!node.timeout_sigs.contains_key(&1));
        assert!(matches!(tr.outbox[0].1.as_ref(), Message::Sync { chains } if chains.len() == 1));
        assert!(node.synced_blocks.contains(&h));
        // nothing new to sync the second time
        let tr = node.on_timeout(1, &timeout_agg(&pki, 1, &[3]), t(34.0));
        assert!(tr.outbox.is_empty());
    }

    #[test]
    fn invalid_timeout_aggregate_ignored() {
        let (pki, mut nodes) = cluster(4);
        let node = &mut nodes[0];
        // signatures over epoch 3 presented as epoch 2
        let tr = node.on_timeout(2, &timeout_agg(&pki, 3, &[2, 3, 4]), t(31.0));
        assert!(tr.is_empty());
        assert_eq!(node.epoch, 1);
        assert!(node.timeout_sigs.is_empty());
    }

    #[test]
    fn epoch_timer_proposes_timeout_block() {
        let (_, mut nodes) = cluster(4);
        let tr = nodes[0].on_epoch_timer(1, t(5.0));
        let props = proposals(&tr);
        assert_eq!(props.len(), 1);
        assert_eq!((props[0].0.epoch, props[0].0.seq), (1, 1));
        assert_eq!(props[0].0.parent_hash, genesis_hash());
        assert!(props[0].1.is_genesis());
        assert_eq!(nodes[0].seq, 2);
        assert_eq!(nodes[0].votes[&props[0].0.hash()].len(), 1);

        // non-eligible node and stale epoch
        assert!(nodes[1].on_epoch_timer(1, t(5.0)).is_empty());
        assert!(nodes[0].on_epoch_timer(7, t(5.0)).is_empty());
    }

    #[test]
    fn quorum_vote_notarizes_and_chains_next_proposal() {
        let (_, mut nodes) = cluster(4);
        let (leader, rest) = nodes.split_first_mut().unwrap();
        let tr = leader.on_epoch_timer(1, t(5.0));
        let (b1, cert, sig) = proposals(&tr).remove(0);
        let mut vote_msgs = Vec::new();
        for v in rest.iter_mut() {
            let tr = v.on_proposal(NodeId(1), &b1, &cert, &sig, t(5.5));
            let vs = votes(&tr);
            assert_eq!(vs.len(), 1);
            assert_eq!(vs[0].0, Dest::Node(NodeId(1)));
            assert_eq!(v.seq, 2);
            vote_msgs.push(vs[0].clone());
        }
        // first vote: 2 of 3, nothing yet
        let tr = leader.on_vote(vote_msgs[0].1, &vote_msgs[0].2, t(6.0));
        assert!(tr.outbox.is_empty());
        // second vote reaches quorum: notarize and propose (1,2)
        let tr = leader.on_vote(vote_msgs[1].1, &vote_msgs[1].2, t(6.0));
        assert!(leader.notarized.contains(&b1.hash()));
        let next = proposals(&tr);
        assert_eq!(next.len(), 1);
        assert_eq!((next[0].0.epoch, next[0].0.seq), (1, 2));
        assert_eq!(next[0].1.block_hash, b1.hash());
        // third vote: already notarized, no second proposal for the slot
        let tr = leader.on_vote(vote_msgs[2].1, &vote_msgs[2].2, t(6.0));
        assert!(proposals(&tr).is_empty());
        assert_eq!(leader.votes[&b1.hash()].len(), 4);
        assert_eq!(leader.seq, 3);
        // duplicate vote keeps the signer set unchanged
        leader.on_vote(vote_msgs[2].1, &vote_msgs[2].2, t(6.1));
        assert_eq!(leader.votes[&b1.hash()].len(), 4);
    }

    #[test]
    fn vote_for_unknown_block_rejected() {
        let (pki, mut nodes) = cluster(4);
        let bogus = Digest([4; 32]);
        let sig = pki.key(NodeId(2)).unwrap().sign(&vote_payload(&bogus));
        let tr = nodes[0].on_vote(bogus, &sig, t(1.0));
        assert!(tr.is_empty());
        assert!(!nodes[0].votes.contains_key(&bogus));
    }

    #[test]
    fn voter_rules() {
        let (pki, mut nodes) = cluster(4);
        let tr = nodes[0].on_epoch_timer(1, t(5.0));
        let (b1, cert, sig) = proposals(&tr).remove(0);

        // proposal from a node that is not eligible: relayed by node 3
        let v = &mut nodes[1];
        assert!(votes(&v.on_proposal(NodeId(3), &b1, &cert, &sig, t(5.5))).is_empty());
        // genuine proposal: vote
        assert_eq!(
            votes(&v.on_proposal(NodeId(1), &b1, &cert, &sig, t(5.5))).len(),
            1
        );
        // replay: already voted for this slot
        assert!(votes(&v.on_proposal(NodeId(1), &b1, &cert, &sig, t(5.6))).is_empty());

        // a self-signed block by node 3 for epoch 1 is not from the eligible proposer
        let k3 = pki.key(NodeId(3)).unwrap();
        let rogue = Block::new(1, 2, vec![], genesis_hash());
        let rsig = k3.sign(&proposal_payload(&rogue.hash()));
        assert!(votes(&nodes[2].on_proposal(NodeId(3), &rogue, &cert, &rsig, t(5.5))).is_empty());
    }

    #[test]
    fn proposal_with_sub_quorum_parent_cert_ignored() {
        let (pki, mut nodes) = cluster(4);
        let tr = nodes[0].on_epoch_timer(1, t(5.0));
        let (b1, _, _) = proposals(&tr).remove(0);
        let h = b1.hash();
        let weak = aggregate(&[
            pki.key(NodeId(1)).unwrap().sign(&vote_payload(&h)),
            pki.key(NodeId(2)).unwrap().sign(&vote_payload(&h)),
        ])
        .unwrap();
        let next = Block::new(1, 2, vec![], h);
        let sig = pki
            .key(NodeId(1))
            .unwrap()
            .sign(&proposal_payload(&next.hash()));
        let cert = Certificate {
            block_hash: h,
            agg: weak,
        };
        let v = &mut nodes[1];
        let tr = v.on_proposal(NodeId(1), &next, &cert, &sig, t(7.0));
        assert!(tr.is_empty());
        assert!(!v.store.contains(&next.hash()));
    }

    #[test]
    fn notarization_timer_emits_timeout_without_advancing() {
        let (_, mut nodes) = cluster(4);
        let node = &mut nodes[2];
        node.start(Time::ZERO);
        let tr = node.on_notarization_timer(1, t(30.0));
        assert_eq!(node.epoch, 1);
        assert!(matches!(
            tr.outbox[0].1.as_ref(),
            Message::Timeout { next_epoch: 2, sigs } if sigs.len() == 1
        ));
        assert_eq!(node.notarization_timer_start, t(30.0));
        // the superseded generation is stale
        assert!(node.on_notarization_timer(1, t(60.0)).is_empty());
        let tr = node.on_notarization_timer(2, t(60.0));
        assert_eq!(tr.outbox.len(), 1);
    }
}
