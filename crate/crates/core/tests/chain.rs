use std::collections::BTreeSet;

use pipelet::chain::{
    finalize_candidates, finalize_scan, validate_chain, Block, BlockStore, Digest,
};
use proptest::prelude::*;

/// A random block tree: each step picks an existing parent and either a
/// normal step (same epoch, seq + 1) or a timeout step (later epoch, seq 1).
#[derive(Debug, Clone)]
struct Tree {
    blocks: Vec<Block>,
    notarized: Vec<bool>,
}

fn tree() -> impl Strategy<Value = Tree> {
    prop::collection::vec(
        (any::<prop::sample::Index>(), 0u8..4, 1u64..3, any::<bool>()),
        1..40,
    )
    .prop_map(|steps| {
        let mut blocks = vec![Block::genesis()];
        let mut notarized = vec![true];
        for (i, (pick, kind, jump, nz)) in steps.into_iter().enumerate() {
            let p = blocks[pick.index(blocks.len())].clone();
            let (epoch, seq) = if kind == 0 || p.is_genesis() {
                (p.epoch + jump, 1)
            } else {
                (p.epoch, p.seq + 1)
            };
            blocks.push(Block::new(
                epoch,
                seq,
                vec![(i as u32).to_be_bytes().to_vec()],
                p.hash(),
            ));
            notarized.push(nz || kind == 3);
        }
        Tree { blocks, notarized }
    })
}

fn store_of(t: &Tree) -> BlockStore {
    let mut s = BlockStore::new();
    for b in &t.blocks[1..] {
        s.insert(b.clone()).unwrap();
    }
    s
}

fn notarized_of(t: &Tree, mask: &[bool]) -> BTreeSet<Digest> {
    t.blocks
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(b, _)| b.hash())
        .collect()
}

/// Every triple of stored blocks is tried directly; each finalizing middle
/// contributes itself and all its ancestors.
fn oracle(t: &Tree, notarized: &BTreeSet<Digest>) -> BTreeSet<Digest> {
    let by_hash = |h: &Digest| t.blocks.iter().find(|b| b.hash() == *h);
    let mut out: BTreeSet<Digest> = [Block::genesis().hash()].into_iter().collect();
    for b1 in &t.blocks {
        for b2 in &t.blocks {
            for b3 in &t.blocks {
                let linked = b2.parent_hash == b1.hash() && b3.parent_hash == b2.hash();
                let all_n = [b1, b2, b3].iter().all(|b| notarized.contains(&b.hash()));
                let shape = !b1.is_genesis()
                    && b1.seq > 1
                    && b1.epoch == b2.epoch
                    && b2.epoch == b3.epoch
                    && b2.seq == b1.seq + 1
                    && b3.seq == b2.seq + 1;
                if linked && all_n && shape {
                    let mut cur = Some(b2);
                    while let Some(b) = cur {
                        out.insert(b.hash());
                        cur = by_hash(&b.parent_hash);
                    }
                }
            }
        }
    }
    out
}

fn genesis_set() -> BTreeSet<Digest> {
    [Block::genesis().hash()].into_iter().collect()
}

proptest! {
    #[test]
    fn scan_matches_oracle(t in tree()) {
        let store = store_of(&t);
        let notarized = notarized_of(&t, &t.notarized);
        let got = finalize_scan(&store, &notarized, &genesis_set()).unwrap();
        prop_assert_eq!(got, oracle(&t, &notarized));
    }

    #[test]
    fn incremental_matches_scan(t in tree(), order in any::<u64>()) {
        let store = store_of(&t);
        let full = notarized_of(&t, &t.notarized);
        // notarize in a shuffled order, offering each new block as the only candidate
        let mut hs: Vec<Digest> = full.iter().copied().collect();
        let r = hs.len().max(1);
        hs.rotate_left((order as usize) % r);
        if order % 2 == 1 {
            hs.reverse();
        }
        let mut notarized = genesis_set();
        let mut finalized = genesis_set();
        for h in &hs {
            notarized.insert(*h);
            finalize_candidates(&store, &notarized, &mut finalized, [h]).unwrap();
        }
        prop_assert_eq!(finalized, finalize_scan(&store, &full, &genesis_set()).unwrap());
    }

    #[test]
    fn finalized_set_is_prefix_closed_and_idempotent(t in tree()) {
        let store = store_of(&t);
        let notarized = notarized_of(&t, &t.notarized);
        let once = finalize_scan(&store, &notarized, &genesis_set()).unwrap();
        for h in &once {
            let b = store.get(h).unwrap();
            if !b.is_genesis() {
                prop_assert!(once.contains(&b.parent_hash));
            }
        }
        prop_assert_eq!(finalize_scan(&store, &notarized, &once).unwrap(), once.clone());
    }

    #[test]
    fn more_notarizations_never_shrink_finality(t in tree(), extra in prop::collection::vec(any::<bool>(), 40)) {
        let store = store_of(&t);
        let small = notarized_of(&t, &t.notarized);
        let mask: Vec<bool> = t.notarized.iter().zip(extra.iter().chain(std::iter::repeat(&false))).map(|(a, b)| *a || *b).collect();
        let big = notarized_of(&t, &mask);
        let fs = finalize_scan(&store, &small, &genesis_set()).unwrap();
        let fb = finalize_scan(&store, &big, &genesis_set()).unwrap();
        prop_assert!(fs.is_subset(&fb));
    }

    #[test]
    fn chains_to_stored_blocks_are_valid(t in tree()) {
        let store = store_of(&t);
        for b in &t.blocks {
            let chain = store.chain_to(&b.hash()).unwrap();
            prop_assert!(validate_chain(&chain));
            prop_assert_eq!(chain.len() as u64 - 1, store.height(&b.hash()).unwrap());
            prop_assert!(store.extends(&b.hash(), &store.genesis_hash()));
        }
    }

    #[test]
    fn insert_is_idempotent(t in tree()) {
        let mut store = store_of(&t);
        let before = store.len();
        for b in &t.blocks[1..] {
            store.insert(b.clone()).unwrap();
        }
        prop_assert_eq!(store.len(), before);
    }
}

#[test]
fn genesis_digest_is_pinned() {
    assert_eq!(
        Block::genesis().hash().to_hex(),
        "7955cb2de90dd9efc6df9fdbf5f5d10c114f4135a9a6b52db1003be749e32f7a"
    );
}
