//! Simulated signature scheme with signer-set aggregation.
//!
//! A signature tag is `SHA-256(secret || signer || payload_digest)`. Only the
//! holder of a secret can produce its tags, and verification goes through the
//! [`Pki`], which plays the role of the public-key directory every node is
//! assumed to know. Aggregates keep an explicit signer bitmap so unions and
//! threshold counts are exact.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::chain::{genesis_hash, quorum, Digest};

/// Node identifier, numbered `1..=n`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("cannot aggregate signatures over different payloads")]
    MixedPayloads,
    #[error("cannot aggregate an empty signature set")]
    Empty,
}

/// Bitmap of node ids.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignerSet {
    words: Vec<u64>,
}

impl SignerSet {
    pub fn new() -> SignerSet {
        SignerSet::default()
    }

    pub fn insert(&mut self, id: NodeId) -> bool {
        let (w, b) = (id.0 as usize / 64, id.0 % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        let fresh = self.words[w] & (1 << b) == 0;
        self.words[w] |= 1 << b;
        fresh
    }

    pub fn contains(&self, id: NodeId) -> bool {
        let (w, b) = (id.0 as usize / 64, id.0 % 64);
        self.words.get(w).is_some_and(|x| x & (1 << b) != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn union_with(&mut self, other: &SignerSet) {
        if self.words.len() < other.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    /// Ids in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64u32)
                .filter(move |b| w & (1u64 << b) != 0)
                .map(move |b| NodeId(wi as u32 * 64 + b))
        })
    }
}

impl fmt::Debug for SignerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|n| n.0)).finish()
    }
}

impl FromIterator<NodeId> for SignerSet {
    fn from_iter<I: IntoIterator<Item = NodeId>>(iter: I) -> Self {
        let mut s = SignerSet::new();
        for id in iter {
            s.insert(id);
        }
        s
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub node_id: NodeId,
    secret: [u8; 32],
    pub public: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("node_id", &self.node_id)
            .field("public", &hex::encode(&self.public[..4]))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Deterministic key material for `node_id`.
    pub fn derive(node_id: NodeId) -> KeyPair {
        let mut h = Sha256::new();
        h.update(b"pipelet/secret");
        h.update(node_id.0.to_be_bytes());
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&h.finalize());
        KeyPair {
            node_id,
            secret,
            public: public_of(&secret),
        }
    }

    pub fn sign(&self, payload: &[u8]) -> Signature {
        let payload_digest = Digest::of(payload);
        Signature {
            signer: self.node_id,
            payload_digest,
            tag: tag(&self.secret, self.node_id, &payload_digest),
        }
    }
}

fn public_of(secret: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"pipelet/public");
    h.update(secret);
    let mut p = [0u8; 32];
    p.copy_from_slice(&h.finalize());
    p
}

fn tag(secret: &[u8; 32], signer: NodeId, payload_digest: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(signer.0.to_be_bytes());
    h.update(payload_digest.0);
    let mut t = [0u8; 32];
    t.copy_from_slice(&h.finalize());
    Digest(t)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: NodeId,
    pub payload_digest: Digest,
    pub tag: Digest,
}

/// Signatures from a set of signers over one payload digest. Tags are stored
/// in increasing signer order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregateSignature {
    pub payload_digest: Digest,
    pub signers: SignerSet,
    tags: Vec<Digest>,
}

impl AggregateSignature {
    pub fn empty(payload_digest: Digest) -> AggregateSignature {
        AggregateSignature {
            payload_digest,
            signers: SignerSet::new(),
            tags: Vec::new(),
        }
    }

    pub fn from_signature(sig: &Signature) -> AggregateSignature {
        let mut a = AggregateSignature::empty(sig.payload_digest);
        a.signers.insert(sig.signer);
        a.tags.push(sig.tag);
        a
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    fn parts(&self) -> impl Iterator<Item = (NodeId, &Digest)> {
        self.signers.iter().zip(self.tags.iter())
    }

    /// Adds one signature. Returns whether the signer was new.
    pub fn add(&mut self, sig: &Signature) -> Result<bool, CryptoError> {
        self.merge(&AggregateSignature::from_signature(sig))
    }

    /// Signer-set union; repeated signers keep their existing tag. Returns
    /// whether any signer was new.
    pub fn merge(&mut self, other: &AggregateSignature) -> Result<bool, CryptoError> {
        if self.payload_digest != other.payload_digest {
            return Err(CryptoError::MixedPayloads);
        }
        if other.parts().all(|(id, _)| self.signers.contains(id)) {
            return Ok(false);
        }
        let mut merged: Vec<(NodeId, Digest)> = self.parts().map(|(i, t)| (i, *t)).collect();
        for (id, t) in other.parts() {
            if !self.signers.contains(id) {
                merged.push((id, *t));
            }
        }
        merged.sort_by_key(|(id, _)| *id);
        for (id, _) in &merged {
            self.signers.insert(*id);
        }
        self.tags = merged.into_iter().map(|(_, t)| t).collect();
        Ok(true)
    }
}

/// Aggregates signatures that all cover the same payload.
pub fn aggregate<'a, I>(sigs: I) -> Result<AggregateSignature, CryptoError>
where
    I: IntoIterator<Item = &'a Signature>,
{
    let mut it = sigs.into_iter();
    let first = it.next().ok_or(CryptoError::Empty)?;
    let mut agg = AggregateSignature::from_signature(first);
    for s in it {
        agg.add(s)?;
    }
    Ok(agg)
}

/// The key directory: every node's key pair, indexed by id. Signing keys are
/// handed out per node; verification is available to everyone.
#[derive(Debug, Clone)]
pub struct Pki {
    keys: Vec<KeyPair>,
}

impl Pki {
    pub fn new(n: usize) -> Pki {
        Pki {
            keys: (1..=n as u32).map(|i| KeyPair::derive(NodeId(i))).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, id: NodeId) -> Option<&KeyPair> {
        if id.0 == 0 {
            return None;
        }
        self.keys.get(id.0 as usize - 1)
    }

    pub fn public(&self, id: NodeId) -> Option<[u8; 32]> {
        self.key(id).map(|k| k.public)
    }

    fn tag_valid(&self, signer: NodeId, payload_digest: &Digest, t: &Digest) -> bool {
        self.key(signer)
            .is_some_and(|k| tag(&k.secret, signer, payload_digest) == *t)
    }

    /// Checks `sig` against `payload` and the key registered for `public`.
    pub fn verify(&self, sig: &Signature, payload: &[u8], public: &[u8; 32]) -> bool {
        self.public(sig.signer).is_some_and(|p| &p == public)
            && sig.payload_digest == Digest::of(payload)
            && self.tag_valid(sig.signer, &sig.payload_digest, &sig.tag)
    }

    /// Checks `sig` against the key of its claimed signer.
    pub fn verify_signer(&self, sig: &Signature, payload: &[u8]) -> bool {
        match self.public(sig.signer) {
            Some(p) => self.verify(sig, payload, &p),
            None => false,
        }
    }

    pub fn verify_aggregate(&self, agg: &AggregateSignature, payload: &[u8]) -> bool {
        agg.payload_digest == Digest::of(payload)
            && agg.signers.len() == agg.tags.len()
            && agg
                .parts()
                .all(|(id, t)| self.tag_valid(id, &agg.payload_digest, t))
    }

    pub fn verify_quorum(&self, agg: &AggregateSignature, payload: &[u8], n: usize) -> bool {
        agg.signers.len() >= quorum(n) && self.verify_aggregate(agg, payload)
    }

    /// Genesis certificates verify by definition; everything else needs a
    /// quorum of votes on the certified block.
    pub fn verify_certificate(&self, cert: &Certificate, n: usize) -> bool {
        if cert.is_genesis() {
            return true;
        }
        self.verify_quorum(&cert.agg, &vote_payload(&cert.block_hash), n)
    }
}

/// Aggregated votes on one block: evidence of notarization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Certificate {
    pub block_hash: Digest,
    pub agg: AggregateSignature,
}

impl Certificate {
    pub fn genesis() -> Certificate {
        let g = genesis_hash();
        Certificate {
            block_hash: g,
            agg: AggregateSignature::empty(Digest::of(&vote_payload(&g))),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.block_hash == genesis_hash() && self.agg.is_empty()
    }

    pub fn signers(&self) -> &SignerSet {
        &self.agg.signers
    }
}

pub fn vote_payload(block_hash: &Digest) -> Vec<u8> {
    let mut p = b"vote".to_vec();
    p.extend_from_slice(&block_hash.0);
    p
}

pub fn proposal_payload(block_hash: &Digest) -> Vec<u8> {
    let mut p = b"proposal".to_vec();
    p.extend_from_slice(&block_hash.0);
    p
}

pub fn timeout_payload(epoch: u64) -> Vec<u8> {
    let mut p = b"timeout".to_vec();
    p.extend_from_slice(&epoch.to_be_bytes());
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_verify_round_trip() {
        let pki = Pki::new(4);
        let k1 = pki.key(NodeId(1)).unwrap();
        let sig = k1.sign(b"hello");
        assert!(pki.verify(&sig, b"hello", &k1.public));
        assert!(!pki.verify(&sig, b"hellp", &k1.public));
        let k2 = pki.key(NodeId(2)).unwrap();
        assert!(!pki.verify(&sig, b"hello", &k2.public));
    }

    #[test]
    fn forged_tag_or_claimed_signer_rejected() {
        let pki = Pki::new(3);
        let mut sig = pki.key(NodeId(1)).unwrap().sign(b"x");
        sig.signer = NodeId(2);
        assert!(!pki.verify_signer(&sig, b"x"));
        let mut sig = pki.key(NodeId(1)).unwrap().sign(b"x");
        sig.tag.0[0] ^= 1;
        assert!(!pki.verify_signer(&sig, b"x"));
        // an unknown id
        let rogue = KeyPair::derive(NodeId(9)).sign(b"x");
        assert!(!pki.verify_signer(&rogue, b"x"));
    }

    #[test]
    fn aggregate_examples() {
        let pki = Pki::new(4);
        let s = |i| pki.key(NodeId(i)).unwrap().sign(b"p");
        let one = aggregate([&s(1)]).unwrap();
        assert_eq!(one.signers.len(), 1);

        let mut a = aggregate([&s(1), &s(2)]).unwrap();
        let b = aggregate([&s(2), &s(3)]).unwrap();
        a.merge(&b).unwrap();
        let ids: Vec<u32> = a.signers.iter().map(|n| n.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert!(pki.verify_aggregate(&a, b"p"));

        let other = pki.key(NodeId(1)).unwrap().sign(b"q");
        assert_eq!(aggregate([&s(1), &other]), Err(CryptoError::MixedPayloads));
        assert_eq!(aggregate(std::iter::empty()), Err(CryptoError::Empty));
    }

    #[test]
    fn quorum_verification() {
        let pki = Pki::new(10);
        let sigs: Vec<_> = (1..=7)
            .map(|i| pki.key(NodeId(i)).unwrap().sign(b"b"))
            .collect();
        let seven = aggregate(&sigs).unwrap();
        assert!(pki.verify_quorum(&seven, b"b", 10));
        let six = aggregate(&sigs[..6]).unwrap();
        assert!(!pki.verify_quorum(&six, b"b", 10));
        // bad tag inside an aggregate of sufficient size
        let mut bad = seven.clone();
        bad.tags[3].0[5] ^= 0xff;
        assert!(!pki.verify_quorum(&bad, b"b", 10));
    }

    #[test]
    fn genesis_certificate_verifies() {
        let pki = Pki::new(4);
        assert!(pki.verify_certificate(&Certificate::genesis(), 4));
        let mut not_genesis = Certificate::genesis();
        not_genesis.block_hash = Digest([1; 32]);
        assert!(!pki.verify_certificate(&not_genesis, 4));
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(
            a in proptest::collection::btree_set(1u32..=12, 1..8),
            b in proptest::collection::btree_set(1u32..=12, 1..8),
            c in proptest::collection::btree_set(1u32..=12, 1..8),
        ) {
            let pki = Pki::new(12);
            let agg = |ids: &std::collections::BTreeSet<u32>| {
                let sigs: Vec<_> = ids.iter().map(|&i| pki.key(NodeId(i)).unwrap().sign(b"m")).collect();
                aggregate(&sigs).unwrap()
            };
            let (xa, xb, xc) = (agg(&a), agg(&b), agg(&c));

            let mut ab = xa.clone(); ab.merge(&xb).unwrap();
            let mut ba = xb.clone(); ba.merge(&xa).unwrap();
            prop_assert_eq!(&ab, &ba);

            let mut ab_c = ab.clone(); ab_c.merge(&xc).unwrap();
            let mut bc = xb.clone(); bc.merge(&xc).unwrap();
            let mut a_bc = xa.clone(); a_bc.merge(&bc).unwrap();
            prop_assert_eq!(&ab_c, &a_bc);
            prop_assert!(pki.verify_aggregate(&ab_c, b"m"));

            let expected: std::collections::BTreeSet<u32> = a.union(&b).chain(c.iter()).copied().collect();
            prop_assert_eq!(ab_c.signers.len(), expected.len());

            // idempotent on repeated signers
            let mut again = ab_c.clone();
            prop_assert!(!again.merge(&xa).unwrap());
            prop_assert_eq!(again, ab_c);
        }
    }
}
