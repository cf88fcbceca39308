//! Byzantine behaviours as wrappers over the honest state machine.
//!
//! Every strategy runs an honest [`NodeState`] underneath and rewrites its
//! output. Nothing here can sign for another node: the wrapper only holds
//! its own key.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{quorum, Block, Digest};
use crate::crypto::{proposal_payload, vote_payload, AggregateSignature, NodeId, Pki};
use crate::protocol::{
    eligible_proposer, Dest, Input, Message, NodeParams, NodeSnapshot, NodeState, Process,
    ProtocolEvent, TimerKind, Transition,
};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    /// Never proposes.
    SilentProposer,
    /// Proposals (and the parent certificates they carry) are not sent to
    /// `targets`.
    WithholdCertificate {
        targets: BTreeSet<NodeId>,
    },
    /// Proposes three blocks in its epoch, keeps the certificate of the
    /// third to itself and later hands it to `release_set` only. An empty
    /// set or missing delay picks the defaults.
    SelectiveRelease {
        #[serde(default)]
        release_set: BTreeSet<NodeId>,
        #[serde(default)]
        release_delay: Option<Time>,
    },
    /// Withholds its vote on the third normal block of every epoch.
    AbstainThirdVote,
    /// Sends one proposal to `a` and a conflicting one for the same slot to `b`.
    Equivocate {
        a: BTreeSet<NodeId>,
        b: BTreeSet<NodeId>,
    },
    /// Sends every outgoing message `factor` times.
    ReplayFlood {
        factor: u32,
    },
    /// Goes silent from `at` on.
    Crash {
        at: Time,
    },
    /// Proposes the first block of its epoch, collects the votes and then
    /// stops: no further proposals and no sync.
    StallingProposer,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::SilentProposer => "silent_proposer",
            Strategy::WithholdCertificate { .. } => "withhold_certificate",
            Strategy::SelectiveRelease { .. } => "selective_release",
            Strategy::AbstainThirdVote => "abstain_third_vote",
            Strategy::Equivocate { .. } => "equivocate",
            Strategy::ReplayFlood { .. } => "replay_flood",
            Strategy::Crash { .. } => "crash",
            Strategy::StallingProposer => "stalling_proposer",
        }
    }

    /// Strategy with its parameters filled in for a network of `n` nodes
    /// where `byzantine` is the full Byzantine set.
    pub fn with_defaults(
        name: &str,
        n: usize,
        byzantine: &BTreeSet<NodeId>,
        params: &NodeParams,
    ) -> Option<Strategy> {
        let honest: Vec<NodeId> = (1..=n as u32)
            .map(NodeId)
            .filter(|i| !byzantine.contains(i))
            .collect();
        let s = match name {
            "honest" => Strategy::Honest,
            "silent_proposer" => Strategy::SilentProposer,
            "withhold_certificate" => Strategy::WithholdCertificate {
                targets: honest.iter().take(honest.len() / 2).copied().collect(),
            },
            "selective_release" => Strategy::SelectiveRelease {
                release_set: default_release_set(n, byzantine),
                release_delay: Some(default_release_delay(params)),
            },
            "abstain_third_vote" => Strategy::AbstainThirdVote,
            "equivocate" => {
                let half = honest.len() / 2;
                Strategy::Equivocate {
                    a: honest[..half].iter().copied().collect(),
                    b: honest[half..].iter().copied().collect(),
                }
            }
            "replay_flood" => Strategy::ReplayFlood { factor: 3 },
            "crash" => Strategy::Crash {
                at: params.timing.min * 2,
            },
            "stalling_proposer" => Strategy::StallingProposer,
            _ => return None,
        };
        Some(s)
    }

    pub const NAMES: [&'static str; 9] = [
        "honest",
        "silent_proposer",
        "withhold_certificate",
        "selective_release",
        "abstain_third_vote",
        "equivocate",
        "replay_flood",
        "crash",
        "stalling_proposer",
    ];
}

/// ceil(N/3)+1 honest nodes, lowest ids first.
pub fn default_release_set(n: usize, byzantine: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    (1..=n as u32)
        .map(NodeId)
        .filter(|i| !byzantine.contains(i))
        .take(n.div_ceil(3) + 1)
        .collect()
}

/// Just under one 1min, so the release lands shortly before the honest
/// notarization timers give up.
pub fn default_release_delay(params: &NodeParams) -> Time {
    params.timing.min - params.timing.delta
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    TooManyFaults { n: usize, f: usize },
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioError::TooManyFaults { n, f: faults } => {
                write!(f, "{faults} faulty proposers need 3f < n, got n = {n}")
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

/// Byzantine assignment for `f` consecutive faulty proposers at the start of
/// the run: nodes `1..=f` stall after collecting votes on their first block.
pub fn failure_scenario(n: usize, f: usize) -> Result<Vec<(NodeId, Strategy)>, ScenarioError> {
    if 3 * f >= n {
        return Err(ScenarioError::TooManyFaults { n, f });
    }
    Ok((1..=f as u32)
        .map(|i| (NodeId(i), Strategy::StallingProposer))
        .collect())
}

#[derive(Debug, Clone, Default)]
struct ReleaseState {
    /// Withheld blocks awaiting release, by epoch.
    pending: Vec<(u64, Digest)>,
    withheld: BTreeSet<Digest>,
}

/// A node running `strategy` on top of an honest state machine.
#[derive(Debug, Clone)]
pub struct AdversaryNode {
    pub strategy: Strategy,
    pub inner: NodeState,
    release: ReleaseState,
    crashed: bool,
}

impl AdversaryNode {
    pub fn new(strategy: Strategy, inner: NodeState) -> AdversaryNode {
        AdversaryNode {
            strategy,
            inner,
            release: ReleaseState::default(),
            crashed: false,
        }
    }

    pub fn init(
        strategy: Strategy,
        id: NodeId,
        params: NodeParams,
        pki: Arc<Pki>,
        now: Time,
    ) -> AdversaryNode {
        AdversaryNode::new(strategy, NodeState::init(id, params, pki, now))
    }

    fn own_epoch(&self, epoch: u64) -> bool {
        eligible_proposer(epoch, self.inner.n()) == self.inner.id
    }

    fn others(&self) -> impl Iterator<Item = NodeId> + '_ {
        let me = self.inner.id;
        (1..=self.inner.n() as u32)
            .map(NodeId)
            .filter(move |i| *i != me)
    }

    /// Replaces broadcast proposals with unicasts to everyone but `skip`.
    fn narrow_proposals(&self, tr: Transition, skip: &BTreeSet<NodeId>) -> Transition {
        let mut out = Transition {
            timers: tr.timers,
            events: tr.events,
            outbox: Vec::new(),
        };
        for (dest, msg) in tr.outbox {
            match (dest, msg.as_ref()) {
                (Dest::Broadcast, Message::Proposal { .. }) => {
                    for to in self.others().filter(|i| !skip.contains(i)) {
                        out.outbox.push((Dest::Node(to), msg.clone()));
                    }
                }
                (Dest::Node(to), Message::Proposal { .. }) if skip.contains(&to) => {}
                _ => out.outbox.push((dest, msg)),
            }
        }
        out
    }

    fn equivocate(
        &mut self,
        tr: Transition,
        a: &BTreeSet<NodeId>,
        b: &BTreeSet<NodeId>,
    ) -> Transition {
        let mut out = Transition {
            timers: tr.timers,
            events: tr.events,
            outbox: Vec::new(),
        };
        for (dest, msg) in tr.outbox {
            let Message::Proposal {
                block, parent_cert, ..
            } = msg.as_ref()
            else {
                out.outbox.push((dest, msg));
                continue;
            };
            let mut txs = block.txs.clone();
            txs.push(b"equivocation".to_vec());
            let alt = Block::new(block.epoch, block.seq, txs, block.parent_hash);
            let alt_hash = match self.inner.store.insert(alt.clone()) {
                Ok(h) => h,
                Err(_) => {
                    out.outbox.push((dest, msg));
                    continue;
                }
            };
            let own_vote = self.inner.key().sign(&vote_payload(&alt_hash));
            self.inner
                .votes
                .insert(alt_hash, AggregateSignature::from_signature(&own_vote));
            let alt_msg = Arc::new(Message::Proposal {
                block: alt,
                parent_cert: parent_cert.clone(),
                sig: self.inner.key().sign(&proposal_payload(&alt_hash)),
            });
            for to in self.others() {
                if a.contains(&to) {
                    out.outbox.push((Dest::Node(to), msg.clone()));
                } else if b.contains(&to) {
                    out.outbox.push((Dest::Node(to), alt_msg.clone()));
                }
            }
        }
        out
    }

    fn selective_release(&mut self, tr: Transition, now: Time) -> Transition {
        let Strategy::SelectiveRelease { release_delay, .. } = &self.strategy else {
            return tr;
        };
        let delay = release_delay.unwrap_or_else(|| default_release_delay(&self.inner.params));
        let mut out = Transition {
            timers: tr.timers,
            events: Vec::new(),
            outbox: Vec::new(),
        };
        for ev in tr.events {
            if let ProtocolEvent::Notarized {
                block, epoch, seq, ..
            } = ev
            {
                if seq == 3 && self.own_epoch(epoch) && self.inner.id == self.block_author(&block) {
                    self.release.withheld.insert(block);
                    self.release.pending.push((epoch, block));
                    out.timer(TimerKind::Release { epoch }, now + delay);
                }
            }
            out.events.push(ev);
        }
        for (dest, msg) in tr.outbox {
            match msg.as_ref() {
                Message::Proposal { block, .. } if self.own_epoch(block.epoch) && block.seq > 3 => {
                }
                Message::Sync { chains } => {
                    let kept: Vec<_> = chains
                        .iter()
                        .filter(|(b, _)| !self.release.withheld.contains(&b.hash()))
                        .cloned()
                        .collect();
                    if !kept.is_empty() {
                        out.send(dest, Message::Sync { chains: kept });
                    }
                }
                _ => out.outbox.push((dest, msg)),
            }
        }
        out
    }

    fn block_author(&self, h: &Digest) -> NodeId {
        let epoch = self.inner.store.get(h).map(|b| b.epoch).unwrap_or(0);
        eligible_proposer(epoch, self.inner.n())
    }

    fn release_now(&mut self, epoch: u64) -> Transition {
        let mut out = Transition::default();
        let Strategy::SelectiveRelease { release_set, .. } = &self.strategy else {
            return out;
        };
        let targets = if release_set.is_empty() {
            // no explicit set: all honest ids are unknown here, so take the
            // lowest ids other than self
            self.others().take(self.inner.n().div_ceil(3) + 1).collect()
        } else {
            release_set.clone()
        };
        let due: Vec<Digest> = self
            .release
            .pending
            .iter()
            .filter(|(e, _)| *e == epoch)
            .map(|(_, h)| *h)
            .collect();
        self.release.pending.retain(|(e, _)| *e != epoch);
        for h in due {
            let Some(block) = self.inner.store.get(&h).cloned() else {
                continue;
            };
            let Some(cert) = self.inner.certificate_for(&h) else {
                continue;
            };
            let msg = Arc::new(Message::Sync {
                chains: vec![(block, cert)],
            });
            for to in targets.iter().filter(|i| **i != self.inner.id) {
                out.outbox.push((Dest::Node(*to), msg.clone()));
            }
        }
        out
    }

    fn stall(&self, tr: Transition) -> Transition {
        Transition {
            outbox: tr
                .outbox
                .into_iter()
                .filter(|(_, m)| match m.as_ref() {
                    Message::Proposal { block, .. } => block.seq == 1,
                    Message::Sync { .. } => false,
                    _ => true,
                })
                .collect(),
            ..tr
        }
    }

    fn abstain(&self, tr: Transition) -> Transition {
        let store = &self.inner.store;
        Transition {
            outbox: tr
                .outbox
                .into_iter()
                .filter(|(_, m)| match m.as_ref() {
                    Message::Vote { block_hash, .. } => {
                        store.get(block_hash).map(|b| b.seq) != Some(4)
                    }
                    _ => true,
                })
                .collect(),
            ..tr
        }
    }
}

impl Process for AdversaryNode {
    fn id(&self) -> NodeId {
        self.inner.id
    }

    fn step(&mut self, input: Input, now: Time) -> Transition {
        if let Strategy::Crash { at } = self.strategy {
            if now >= at {
                self.crashed = true;
            }
            if self.crashed {
                return Transition::default();
            }
        }
        if let Input::Timer(TimerKind::Release { epoch }) = input {
            return self.release_now(epoch);
        }
        let tr = self.inner.step(input, now);
        match self.strategy.clone() {
            Strategy::Honest | Strategy::Crash { .. } => tr,
            Strategy::SilentProposer => Transition {
                outbox: tr
                    .outbox
                    .into_iter()
                    .filter(|(_, m)| !matches!(m.as_ref(), Message::Proposal { .. }))
                    .collect(),
                ..tr
            },
            Strategy::WithholdCertificate { targets } => self.narrow_proposals(tr, &targets),
            Strategy::SelectiveRelease { .. } => self.selective_release(tr, now),
            Strategy::AbstainThirdVote => self.abstain(tr),
            Strategy::Equivocate { a, b } => self.equivocate(tr, &a, &b),
            Strategy::ReplayFlood { factor } => {
                let mut out = Transition {
                    timers: tr.timers,
                    events: tr.events,
                    outbox: Vec::new(),
                };
                for (dest, msg) in tr.outbox {
                    for _ in 0..factor.max(1) {
                        out.outbox.push((dest, msg.clone()));
                    }
                }
                out
            }
            Strategy::StallingProposer => self.stall(tr),
        }
    }

    fn epoch(&self) -> u64 {
        self.inner.epoch
    }

    fn snapshot(&self) -> NodeSnapshot {
        self.inner.snapshot()
    }
}

/// Whether the honest votes alone reach quorum when `f` voters abstain.
pub fn honest_votes_reach_quorum(n: usize, f: usize) -> bool {
    n - f >= quorum(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::genesis_hash;
    use crate::time::Timing;

    fn params(n: usize) -> NodeParams {
        NodeParams::new(n, Timing::default())
    }

    fn node(strategy: Strategy, id: u32, n: usize) -> (Arc<Pki>, AdversaryNode) {
        let pki = Arc::new(Pki::new(n));
        let a = AdversaryNode::init(strategy, NodeId(id), params(n), pki.clone(), Time::ZERO);
        (pki, a)
    }

    fn proposals(tr: &Transition) -> Vec<(Dest, Block)> {
        tr.outbox
            .iter()
            .filter_map(|(d, m)| match m.as_ref() {
                Message::Proposal { block, .. } => Some((*d, block.clone())),
                _ => None,
            })
            .collect()
    }

    fn fire_epoch(a: &mut AdversaryNode) -> Transition {
        a.step(
            Input::Timer(TimerKind::Epoch { epoch: 1 }),
            Time::from_units(5.0),
        )
    }

    #[test]
    fn silent_proposer_sends_nothing_when_eligible() {
        let (_, mut a) = node(Strategy::SilentProposer, 1, 4);
        assert!(proposals(&fire_epoch(&mut a)).is_empty());
    }

    #[test]
    fn withhold_skips_targets() {
        let targets: BTreeSet<_> = [NodeId(2)].into_iter().collect();
        let (_, mut a) = node(Strategy::WithholdCertificate { targets }, 1, 4);
        let dests: Vec<Dest> = proposals(&fire_epoch(&mut a))
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(dests, vec![Dest::Node(NodeId(3)), Dest::Node(NodeId(4))]);
    }

    #[test]
    fn equivocation_sends_distinct_blocks_same_slot() {
        let a_set: BTreeSet<_> = [NodeId(2)].into_iter().collect();
        let b_set: BTreeSet<_> = [NodeId(3), NodeId(4)].into_iter().collect();
        let (pki, mut a) = node(Strategy::Equivocate { a: a_set, b: b_set }, 1, 4);
        let tr = fire_epoch(&mut a);
        let ps = proposals(&tr);
        assert_eq!(ps.len(), 3);
        let to2 = &ps.iter().find(|p| p.0 == Dest::Node(NodeId(2))).unwrap().1;
        let to3 = &ps.iter().find(|p| p.0 == Dest::Node(NodeId(3))).unwrap().1;
        assert_ne!(to2.hash(), to3.hash());
        assert_eq!((to2.epoch, to2.seq), (to3.epoch, to3.seq));
        // both carry valid signatures from the equivocator
        for (_, m) in &tr.outbox {
            if let Message::Proposal { block, sig, .. } = m.as_ref() {
                assert!(pki.verify_signer(sig, &proposal_payload(&block.hash())));
                assert_eq!(sig.signer, NodeId(1));
            }
        }
    }

    #[test]
    fn replay_flood_duplicates() {
        let (_, mut a) = node(Strategy::ReplayFlood { factor: 3 }, 1, 4);
        assert_eq!(proposals(&fire_epoch(&mut a)).len(), 3);
    }

    #[test]
    fn crash_stops_everything() {
        let (_, mut a) = node(
            Strategy::Crash {
                at: Time::from_units(1.0),
            },
            1,
            4,
        );
        assert!(fire_epoch(&mut a).is_empty());
    }

    #[test]
    fn stalling_proposer_keeps_only_first_block() {
        let (_, mut a) = node(Strategy::StallingProposer, 1, 4);
        let ps = proposals(&fire_epoch(&mut a));
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].1.parent_hash, genesis_hash());
    }

    #[test]
    fn failure_scenario_assignments() {
        let s = failure_scenario(4, 1).unwrap();
        assert_eq!(s, vec![(NodeId(1), Strategy::StallingProposer)]);
        let s = failure_scenario(7, 2).unwrap();
        assert_eq!(
            s.iter().map(|x| x.0).collect::<Vec<_>>(),
            vec![NodeId(1), NodeId(2)]
        );
        assert!(failure_scenario(10, 0).unwrap().is_empty());
        assert!(matches!(
            failure_scenario(3, 1),
            Err(ScenarioError::TooManyFaults { n: 3, f: 1 })
        ));
    }

    #[test]
    fn abstention_threshold() {
        assert!(honest_votes_reach_quorum(4, 1));
        assert!(!honest_votes_reach_quorum(7, 3));
    }

    #[test]
    fn default_release_set_size() {
        let byz: BTreeSet<_> = [NodeId(1)].into_iter().collect();
        let set = default_release_set(4, &byz);
        assert_eq!(set.len(), 3);
        assert!(!set.contains(&NodeId(1)));
        let byz: BTreeSet<_> = [NodeId(1), NodeId(2), NodeId(3)].into_iter().collect();
        assert_eq!(default_release_set(10, &byz).len(), 5);
    }

    #[test]
    fn strategy_names_round_trip() {
        let byz: BTreeSet<_> = [NodeId(1)].into_iter().collect();
        for name in Strategy::NAMES {
            let s = Strategy::with_defaults(name, 4, &byz, &params(4)).unwrap();
            assert_eq!(s.name(), name);
            let json = serde_json::to_string(&s).unwrap();
            let back: Strategy = serde_json::from_str(&json).unwrap();
            assert_eq!(back, s);
        }
        assert!(Strategy::with_defaults("bogus", 4, &byz, &params(4)).is_none());
    }
}
