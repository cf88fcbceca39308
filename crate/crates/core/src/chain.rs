//! Block and chain data model: hashing, the normal/timeout classification,
//! chain validity, the notarization quorum and the finalization rule.
//!
//! Everything in here is a plain value computation with no notion of nodes,
//! time or networking.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// SHA-256 output used for block hashes and signature payloads.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        Digest(d)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest, ChainError> {
        let bytes = hex::decode(s).map_err(|_| ChainError::BadDigest(s.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| ChainError::BadDigest(s.to_string()))?;
        Ok(Digest(arr))
    }

    /// First eight hex characters, for log lines.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("block {0:?} references a parent that is not in the store")]
    DanglingParent(Digest),
    #[error("digest {0:?} does not resolve to a stored block")]
    UnknownBlock(Digest),
    #[error("malformed digest {0:?}")]
    BadDigest(String),
}

/// `(epoch, seq, txs, parent_hash)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub epoch: u64,
    pub seq: u64,
    pub txs: Vec<Vec<u8>>,
    pub parent_hash: Digest,
}

impl Block {
    pub fn new(epoch: u64, seq: u64, txs: Vec<Vec<u8>>, parent_hash: Digest) -> Block {
        Block {
            epoch,
            seq,
            txs,
            parent_hash,
        }
    }

    pub fn genesis() -> Block {
        Block::new(0, 0, Vec::new(), Digest::ZERO)
    }

    pub fn is_genesis(&self) -> bool {
        self.epoch == 0 && self.seq == 0 && self.txs.is_empty() && self.parent_hash == Digest::ZERO
    }

    /// Canonical encoding: big-endian `epoch: u64`, `seq: u64`,
    /// `tx_count: u32`, each tx as `len: u32` followed by its bytes, then the
    /// 32-byte parent hash.
    pub fn encode(&self) -> Vec<u8> {
        let tx_bytes: usize = self.txs.iter().map(|t| 4 + t.len()).sum();
        let mut out = Vec::with_capacity(8 + 8 + 4 + tx_bytes + 32);
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.txs.len() as u32).to_be_bytes());
        for tx in &self.txs {
            out.extend_from_slice(&(tx.len() as u32).to_be_bytes());
            out.extend_from_slice(tx);
        }
        out.extend_from_slice(&self.parent_hash.0);
        out
    }

    pub fn hash(&self) -> Digest {
        block_hash(self)
    }
}

/// Digest of the genesis block under the canonical encoding.
pub const GENESIS_HASH_HEX: &str =
    "7955cb2de90dd9efc6df9fdbf5f5d10c114f4135a9a6b52db1003be749e32f7a";

pub fn block_hash(b: &Block) -> Digest {
    Digest::of(&b.encode())
}

pub fn genesis_hash() -> Digest {
    block_hash(&Block::genesis())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Normal,
    Timeout,
    Invalid,
}

/// Classifies `b` relative to `parent`. A hash mismatch is `Invalid`.
pub fn classify(b: &Block, parent: &Block) -> BlockKind {
    if b.parent_hash != parent.hash() {
        return BlockKind::Invalid;
    }
    if b.epoch == parent.epoch && b.seq == parent.seq + 1 {
        BlockKind::Normal
    } else if b.epoch > parent.epoch && b.seq == 1 {
        BlockKind::Timeout
    } else {
        BlockKind::Invalid
    }
}

/// A chain is valid iff it starts at genesis and every link is hash-correct
/// and a normal or timeout step.
pub fn validate_chain(chain: &[Block]) -> bool {
    match chain.first() {
        Some(g) if g.is_genesis() => {}
        _ => return false,
    }
    chain
        .windows(2)
        .all(|w| classify(&w[1], &w[0]) != BlockKind::Invalid)
}

/// Vote and timeout threshold: `ceil(2n / 3)`.
pub fn quorum(n: usize) -> usize {
    assert!(n >= 1, "quorum of an empty node set");
    (2 * n).div_ceil(3)
}

/// Hash-indexed blocks with their chain lengths. Genesis is always present
/// at length 0.
#[derive(Debug, Clone)]
pub struct BlockStore {
    blocks: HashMap<Digest, Block>,
    heights: HashMap<Digest, u64>,
    children: HashMap<Digest, Vec<Digest>>,
    genesis: Digest,
}

impl Default for BlockStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockStore {
    pub fn new() -> BlockStore {
        let g = Block::genesis();
        let gh = g.hash();
        let mut blocks = HashMap::new();
        blocks.insert(gh, g);
        let mut heights = HashMap::new();
        heights.insert(gh, 0);
        BlockStore {
            blocks,
            heights,
            children: HashMap::new(),
            genesis: gh,
        }
    }

    pub fn genesis_hash(&self) -> Digest {
        self.genesis
    }

    /// Inserts `b`, returning its digest. Re-inserting a known block is a no-op.
    pub fn insert(&mut self, b: Block) -> Result<Digest, ChainError> {
        let h = b.hash();
        if self.blocks.contains_key(&h) {
            return Ok(h);
        }
        let parent_height = *self
            .heights
            .get(&b.parent_hash)
            .ok_or(ChainError::DanglingParent(h))?;
        self.children.entry(b.parent_hash).or_default().push(h);
        self.heights.insert(h, parent_height + 1);
        self.blocks.insert(h, b);
        Ok(h)
    }

    pub fn contains(&self, h: &Digest) -> bool {
        self.blocks.contains_key(h)
    }

    pub fn get(&self, h: &Digest) -> Option<&Block> {
        self.blocks.get(h)
    }

    pub fn height(&self, h: &Digest) -> Option<u64> {
        self.heights.get(h).copied()
    }

    pub fn children(&self, h: &Digest) -> &[Digest] {
        self.children.get(h).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Blocks from genesis to `tip`, inclusive of both.
    pub fn chain_to(&self, tip: &Digest) -> Result<Vec<Block>, ChainError> {
        let mut out = Vec::new();
        let mut cur = *tip;
        loop {
            let b = self.get(&cur).ok_or(ChainError::UnknownBlock(cur))?;
            out.push(b.clone());
            if cur == self.genesis {
                break;
            }
            cur = b.parent_hash;
        }
        out.reverse();
        Ok(out)
    }

    /// True iff `ancestor` lies on the chain ending at `h` (inclusive).
    pub fn extends(&self, h: &Digest, ancestor: &Digest) -> bool {
        let (Some(hh), Some(ah)) = (self.height(h), self.height(ancestor)) else {
            return false;
        };
        if ah > hh {
            return false;
        }
        let mut cur = *h;
        for _ in 0..(hh - ah) {
            match self.get(&cur) {
                Some(b) => cur = b.parent_hash,
                None => return false,
            }
        }
        cur == *ancestor
    }
}

fn is_finalizing_triple(b1: &Block, b2: &Block, b3: &Block) -> bool {
    b1.seq > 1
        && b1.epoch == b2.epoch
        && b2.epoch == b3.epoch
        && b2.seq == b1.seq + 1
        && b3.seq == b2.seq + 1
}

/// Checks every finalizing triple that contains one of `candidates`, marks
/// each middle block and its whole prefix as finalized and returns the newly
/// finalized digests, ancestors first.
///
/// A triple is three hash-linked notarized blocks of one epoch with
/// consecutive sequence numbers whose first block is itself a normal block
/// (`seq > 1`).
pub fn finalize_candidates<'a, I>(
    store: &BlockStore,
    notarized: &BTreeSet<Digest>,
    finalized: &mut BTreeSet<Digest>,
    candidates: I,
) -> Result<Vec<Digest>, ChainError>
where
    I: IntoIterator<Item = &'a Digest>,
{
    let get = |h: &Digest| store.get(h).ok_or(ChainError::UnknownBlock(*h));
    let mut middles: Vec<Digest> = Vec::new();
    for c in candidates {
        let cb = get(c)?;
        if cb.is_genesis() {
            continue;
        }
        // c as the last block of the triple
        if let Some(p) = store.get(&cb.parent_hash) {
            if let Some(g) = store.get(&p.parent_hash) {
                if !p.is_genesis()
                    && notarized.contains(&cb.parent_hash)
                    && notarized.contains(&p.parent_hash)
                    && is_finalizing_triple(g, p, cb)
                {
                    middles.push(cb.parent_hash);
                }
            }
        }
        // c as the middle block
        if let Some(p) = store.get(&cb.parent_hash) {
            if notarized.contains(&cb.parent_hash) {
                for child in store.children(c) {
                    if notarized.contains(child) && is_finalizing_triple(p, cb, get(child)?) {
                        middles.push(*c);
                        break;
                    }
                }
            }
        }
        // c as the first block
        for child in store.children(c) {
            if !notarized.contains(child) {
                continue;
            }
            let cbk = get(child)?;
            for grandchild in store.children(child) {
                if notarized.contains(grandchild) && is_finalizing_triple(cb, cbk, get(grandchild)?)
                {
                    middles.push(*child);
                }
            }
        }
    }

    let mut newly = Vec::new();
    for m in middles {
        let mut path = Vec::new();
        let mut cur = m;
        while !finalized.contains(&cur) {
            path.push(cur);
            let b = get(&cur)?;
            if b.is_genesis() {
                break;
            }
            cur = b.parent_hash;
        }
        for h in path.into_iter().rev() {
            finalized.insert(h);
            newly.push(h);
        }
    }
    Ok(newly)
}

/// Applies the finalization rule to every notarized block and returns the
/// enlarged finalized set.
pub fn finalize_scan(
    store: &BlockStore,
    notarized: &BTreeSet<Digest>,
    finalized: &BTreeSet<Digest>,
) -> Result<BTreeSet<Digest>, ChainError> {
    for h in notarized.iter().chain(finalized.iter()) {
        if !store.contains(h) {
            return Err(ChainError::UnknownBlock(*h));
        }
    }
    let mut out = finalized.clone();
    finalize_candidates(store, notarized, &mut out, notarized.iter())?;
    Ok(out)
}
