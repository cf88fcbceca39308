//! Message-pattern models of Streamlet and PaLa for cost comparisons.
//!
//! Both echo every message they see for the first time to all peers. They
//! reuse the Pipelet message types; fields a baseline has no use for are
//! carried but ignored.

mod pala;
mod streamlet;

use std::collections::{BTreeSet, HashMap, HashSet};

pub use pala::PalaNode;
pub use streamlet::StreamletNode;

use crate::chain::{Block, BlockStore, Digest};
use crate::crypto::NodeId;
use crate::protocol::Message;

/// Identity of a message for echo suppression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum SeenKey {
    Proposal(Digest),
    Vote(Digest, NodeId),
    Timeout(u64, Vec<NodeId>),
    Sync(Digest),
}

fn seen_key(msg: &Message) -> SeenKey {
    match msg {
        Message::Proposal { block, .. } => SeenKey::Proposal(block.hash()),
        Message::Vote { block_hash, sig } => SeenKey::Vote(*block_hash, sig.signer),
        Message::Timeout { next_epoch, sigs } => {
            SeenKey::Timeout(*next_epoch, sigs.signers.iter().collect())
        }
        Message::Sync { chains } => {
            SeenKey::Sync(chains.last().map(|(b, _)| b.hash()).unwrap_or(Digest::ZERO))
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Echo {
    seen: HashSet<SeenKey>,
}

impl Echo {
    /// Marks `msg` seen; true the first time.
    fn first_sight(&mut self, msg: &Message) -> bool {
        self.seen.insert(seen_key(msg))
    }
}

/// Blocks whose parent has not arrived yet, keyed by the missing parent.
#[derive(Debug, Clone, Default)]
struct Orphans {
    waiting: HashMap<Digest, Vec<(NodeId, Block)>>,
}

impl Orphans {
    fn park(&mut self, from: NodeId, b: Block) {
        self.waiting
            .entry(b.parent_hash)
            .or_default()
            .push((from, b));
    }

    /// Inserts `b` and every parked descendant; returns the inserted blocks
    /// parent-first with their senders.
    fn insert(&mut self, store: &mut BlockStore, from: NodeId, b: Block) -> Vec<(NodeId, Digest)> {
        if !store.contains(&b.parent_hash) {
            self.park(from, b);
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut stack = vec![(from, b)];
        while let Some((from, b)) = stack.pop() {
            let Ok(h) = store.insert(b) else { continue };
            out.push((from, h));
            if let Some(kids) = self.waiting.remove(&h) {
                stack.extend(kids);
            }
        }
        out
    }
}

/// Streamlet finalization: for three hash-linked notarized blocks with
/// consecutive epochs, the middle block and its prefix become final.
/// Checks every triple that contains `h`; returns new digests ancestors-first.
fn finalize_consecutive_epochs(
    store: &BlockStore,
    notarized: &BTreeSet<Digest>,
    finalized: &mut BTreeSet<Digest>,
    h: &Digest,
) -> Vec<Digest> {
    let linked = |a: &Digest, b: &Digest| -> bool {
        match (store.get(a), store.get(b)) {
            (Some(pa), Some(cb)) => {
                cb.parent_hash == *a
                    && notarized.contains(a)
                    && notarized.contains(b)
                    && cb.epoch == pa.epoch + 1
            }
            _ => false,
        }
    };
    let parent = |x: &Digest| {
        store
            .get(x)
            .filter(|b| !b.is_genesis())
            .map(|b| b.parent_hash)
    };
    let mut middles = Vec::new();
    // h last
    if let Some(p) = parent(h) {
        if let Some(g) = store.get(&p).map(|b| b.parent_hash) {
            if p != store.genesis_hash() && linked(&g, &p) && linked(&p, h) {
                middles.push(p);
            }
        }
    }
    // h middle
    if let Some(p) = parent(h) {
        if linked(&p, h) {
            for c in store.children(h) {
                if linked(h, c) {
                    middles.push(*h);
                }
            }
        }
    }
    // h first
    for c in store.children(h) {
        if linked(h, c) {
            for g in store.children(c) {
                if linked(c, g) {
                    middles.push(*c);
                }
            }
        }
    }
    let mut out = Vec::new();
    for m in middles {
        let mut chain = Vec::new();
        let mut cur = m;
        while !finalized.contains(&cur) {
            chain.push(cur);
            match store.get(&cur) {
                Some(b) if !b.is_genesis() => cur = b.parent_hash,
                _ => break,
            }
        }
        for d in chain.into_iter().rev() {
            finalized.insert(d);
            out.push(d);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::genesis_hash;

    #[test]
    fn streamlet_rule_needs_consecutive_epochs() {
        let mut store = BlockStore::new();
        let b1 = store
            .insert(Block::new(1, 1, vec![], genesis_hash()))
            .unwrap();
        let b2 = store.insert(Block::new(2, 1, vec![], b1)).unwrap();
        let b4 = store.insert(Block::new(4, 1, vec![], b2)).unwrap();
        let b5 = store.insert(Block::new(5, 1, vec![], b4)).unwrap();
        let g = genesis_hash();
        let mut notarized: BTreeSet<_> = [g, b1, b2, b4, b5].into_iter().collect();
        let mut fin: BTreeSet<_> = [g].into_iter().collect();
        // genesis(0), 1, 2 are consecutive: block of epoch 1 final
        assert_eq!(
            finalize_consecutive_epochs(&store, &notarized, &mut fin, &b2),
            vec![b1]
        );
        // 2, 4, 5 are not consecutive
        assert!(finalize_consecutive_epochs(&store, &notarized, &mut fin, &b5).is_empty());
        let b6 = store.insert(Block::new(6, 1, vec![], b5)).unwrap();
        notarized.insert(b6);
        assert_eq!(
            finalize_consecutive_epochs(&store, &notarized, &mut fin, &b6),
            vec![b2, b4, b5]
        );
    }

    #[test]
    fn orphans_wait_for_parent() {
        let mut store = BlockStore::new();
        let mut orphans = Orphans::default();
        let a = Block::new(1, 1, vec![], genesis_hash());
        let b = Block::new(2, 1, vec![], a.hash());
        assert!(orphans.insert(&mut store, NodeId(2), b.clone()).is_empty());
        let got = orphans.insert(&mut store, NodeId(1), a.clone());
        assert_eq!(got, vec![(NodeId(1), a.hash()), (NodeId(2), b.hash())]);
    }
}
