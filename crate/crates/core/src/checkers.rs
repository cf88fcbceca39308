//! Invariant monitors over traces.
//!
//! Each monitor consumes trace records in order and reports violations at
//! the end, so it can run alongside a simulation or over a stored trace.
//! Byzantine nodes are exempt: every monitor is built with the honest mask.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simnet::{RecordKind, TraceRecord, Window};
use crate::time::{Time, Timing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    Consistency,
    Uniqueness,
    NeighborLength,
    EpochMonotone,
    Liveness,
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Monitor::Consistency => "consistency",
            Monitor::Uniqueness => "uniqueness",
            Monitor::NeighborLength => "neighbor_length",
            Monitor::EpochMonotone => "epoch_monotone",
            Monitor::Liveness => "liveness",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: Monitor,
    pub t: Time,
    pub nodes: Vec<u32>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] t={} nodes={:?}: {}",
            self.kind, self.t, self.nodes, self.detail
        )
    }
}

fn honest_at(honest: &[bool], node: u32) -> bool {
    (node as usize)
        .checked_sub(1)
        .and_then(|i| honest.get(i))
        .copied()
        .unwrap_or(false)
}

/// Finalized chains of honest nodes must be prefix-related.
#[derive(Debug, Clone)]
pub struct ConsistencyMonitor {
    honest: Vec<bool>,
    // height -> (digest, first node that finalized it there)
    canonical: HashMap<u64, (String, u32)>,
    per_node: Vec<HashMap<u64, String>>,
    reported: Vec<(u32, u32)>,
    violations: Vec<Violation>,
}

impl ConsistencyMonitor {
    pub fn new(honest: Vec<bool>) -> Self {
        let n = honest.len();
        ConsistencyMonitor {
            honest,
            canonical: HashMap::new(),
            per_node: vec![HashMap::new(); n],
            reported: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        if r.kind != RecordKind::Finalize || !honest_at(&self.honest, r.node) {
            return;
        }
        let (Some(block), Some(len)) = (&r.block, r.len) else {
            return;
        };
        let mine = &mut self.per_node[r.node as usize - 1];
        if let Some(prev) = mine.get(&len) {
            if prev != block {
                self.violations.push(Violation {
                    kind: Monitor::Consistency,
                    t: r.t,
                    nodes: vec![r.node],
                    detail: format!(
                        "node {} finalized {} and {} at height {len}",
                        r.node,
                        short(prev),
                        short(block)
                    ),
                });
            }
            return;
        }
        mine.insert(len, block.clone());
        match self.canonical.get(&len) {
            None => {
                self.canonical.insert(len, (block.clone(), r.node));
            }
            Some((digest, other)) if digest != block => {
                let pair = (*other.min(&r.node), *other.max(&r.node));
                if !self.reported.contains(&pair) {
                    self.reported.push(pair);
                    self.violations.push(Violation {
                        kind: Monitor::Consistency,
                        t: r.t,
                        nodes: vec![pair.0, pair.1],
                        detail: format!(
                            "finalized chains diverge at height {len}: node {other} has {}, node {} has {}",
                            short(digest),
                            r.node,
                            short(block)
                        ),
                    });
                }
            }
            Some(_) => {}
        }
    }

    pub fn finish(self) -> Vec<Violation> {
        self.violations
    }
}

fn short(hex: &str) -> &str {
    &hex[..hex.len().min(12)]
}

/// No two distinct blocks notarized by honest nodes share (epoch, seq).
#[derive(Debug, Clone)]
pub struct UniquenessMonitor {
    honest: Vec<bool>,
    slots: HashMap<(u64, u64), (String, u32)>,
    reported: Vec<(u64, u64, String)>,
    violations: Vec<Violation>,
}

impl UniquenessMonitor {
    pub fn new(honest: Vec<bool>) -> Self {
        UniquenessMonitor {
            honest,
            slots: HashMap::new(),
            reported: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        if r.kind != RecordKind::Notarize || !honest_at(&self.honest, r.node) {
            return;
        }
        let (Some(block), Some(seq)) = (&r.block, r.seq) else {
            return;
        };
        let slot = (r.epoch, seq);
        match self.slots.get(&slot) {
            None => {
                self.slots.insert(slot, (block.clone(), r.node));
            }
            Some((first, other)) if first != block => {
                let key = (slot.0, slot.1, block.clone());
                if !self.reported.contains(&key) {
                    self.reported.push(key);
                    self.violations.push(Violation {
                        kind: Monitor::Uniqueness,
                        t: r.t,
                        nodes: vec![*other, r.node],
                        detail: format!(
                            "slot ({}, {}) notarized as {} and {}",
                            slot.0,
                            slot.1,
                            short(first),
                            short(block)
                        ),
                    });
                }
            }
            Some(_) => {}
        }
    }

    pub fn finish(self) -> Vec<Violation> {
        self.violations
    }
}

/// Whenever an honest node's longest notarized chain reaches length `l`,
/// some other honest node must be at `l - 1` or more.
#[derive(Debug, Clone)]
pub struct NeighborLengthMonitor {
    honest: Vec<bool>,
    longest: Vec<u64>,
    violations: Vec<Violation>,
}

impl NeighborLengthMonitor {
    pub fn new(honest: Vec<bool>) -> Self {
        let n = honest.len();
        NeighborLengthMonitor {
            honest,
            longest: vec![0; n],
            violations: Vec::new(),
        }
    }

    /// Checks a set of honest lengths directly; returns the offending
    /// index if one node is more than one ahead of all the others.
    pub fn check_lengths(lengths: &[u64]) -> Option<usize> {
        if lengths.len() < 2 {
            return None;
        }
        let (top, &l) = lengths
            .iter()
            .enumerate()
            .max_by_key(|(i, l)| (**l, usize::MAX - i))?;
        let others_ok = lengths
            .iter()
            .enumerate()
            .any(|(i, &x)| i != top && x + 1 >= l);
        (!others_ok).then_some(top)
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        if r.kind != RecordKind::Notarize || !honest_at(&self.honest, r.node) {
            return;
        }
        let Some(len) = r.len else { return };
        let i = r.node as usize - 1;
        if len <= self.longest[i] {
            return;
        }
        self.longest[i] = len;
        let honest: Vec<(u32, u64)> = (0..self.longest.len())
            .filter(|&j| self.honest[j])
            .map(|j| (j as u32 + 1, self.longest[j]))
            .collect();
        let lengths: Vec<u64> = honest.iter().map(|x| x.1).collect();
        if let Some(top) = Self::check_lengths(&lengths) {
            self.violations.push(Violation {
                kind: Monitor::NeighborLength,
                t: r.t,
                nodes: vec![honest[top].0],
                detail: format!(
                    "node {} reached length {} while every other honest node is below {}",
                    honest[top].0,
                    honest[top].1,
                    honest[top].1 - 1
                ),
            });
        }
    }

    pub fn finish(self) -> Vec<Violation> {
        self.violations
    }
}

/// Honest epochs never decrease.
#[derive(Debug, Clone)]
pub struct EpochMonotoneMonitor {
    honest: Vec<bool>,
    last: Vec<u64>,
    violations: Vec<Violation>,
}

impl EpochMonotoneMonitor {
    pub fn new(honest: Vec<bool>) -> Self {
        let n = honest.len();
        EpochMonotoneMonitor {
            honest,
            last: vec![0; n],
            violations: Vec::new(),
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        if r.kind != RecordKind::Epoch || !honest_at(&self.honest, r.node) {
            return;
        }
        let i = r.node as usize - 1;
        if r.epoch < self.last[i] {
            self.violations.push(Violation {
                kind: Monitor::EpochMonotone,
                t: r.t,
                nodes: vec![r.node],
                detail: format!(
                    "node {} moved from epoch {} to {}",
                    r.node, self.last[i], r.epoch
                ),
            });
        }
        self.last[i] = self.last[i].max(r.epoch);
    }

    pub fn finish(self) -> Vec<Violation> {
        self.violations
    }
}

/// Minimum synchrony window, in time units, after which every honest
/// finalized chain must have grown with `f` faulty proposers:
/// `(1sec + 7Δ + 1min)·f + 4·(4min + 2Δ) + (2sec + 18Δ + 1min)`.
pub fn liveness_bound(timing: &Timing, f: u64) -> Time {
    let (d, s, m) = (timing.delta, timing.sec, timing.min);
    (s + d * 7 + m) * f + (m * 4 + d * 2) * 4 + (s * 2 + d * 18 + m)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LivenessOutcome {
    Checked(Vec<Violation>),
    /// The window is shorter than the bound, so nothing is promised.
    Skipped {
        required: Time,
        actual: Time,
    },
}

/// Every honest node's finalized chain is longer at `t1` than at `t0`.
#[derive(Debug, Clone)]
pub struct LivenessMonitor {
    honest: Vec<bool>,
    window: Window,
    required: Time,
    at_t0: Vec<u64>,
    at_t1: Vec<u64>,
}

impl LivenessMonitor {
    pub fn new(honest: Vec<bool>, window: Window, timing: &Timing, f: u64) -> Self {
        let n = honest.len();
        LivenessMonitor {
            honest,
            window,
            required: liveness_bound(timing, f),
            at_t0: vec![0; n],
            at_t1: vec![0; n],
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        if r.kind != RecordKind::Finalize || !honest_at(&self.honest, r.node) {
            return;
        }
        let Some(len) = r.len else { return };
        let i = r.node as usize - 1;
        if r.t <= self.window.start() {
            self.at_t0[i] = self.at_t0[i].max(len);
        }
        if r.t <= self.window.end() {
            self.at_t1[i] = self.at_t1[i].max(len);
        }
    }

    pub fn finish(self) -> LivenessOutcome {
        if self.window.len() < self.required {
            return LivenessOutcome::Skipped {
                required: self.required,
                actual: self.window.len(),
            };
        }
        let v = (0..self.honest.len())
            .filter(|&i| self.honest[i] && self.at_t1[i] <= self.at_t0[i])
            .map(|i| Violation {
                kind: Monitor::Liveness,
                t: self.window.end(),
                nodes: vec![i as u32 + 1],
                detail: format!(
                    "node {} finalized length {} at t0={} and {} at t1={}",
                    i + 1,
                    self.at_t0[i],
                    self.window.start(),
                    self.at_t1[i],
                    self.window.end()
                ),
            })
            .collect();
        LivenessOutcome::Checked(v)
    }
}

/// The four safety monitors plus any liveness windows, fed together.
#[derive(Debug, Clone)]
pub struct MonitorSet {
    consistency: ConsistencyMonitor,
    uniqueness: UniquenessMonitor,
    neighbor: NeighborLengthMonitor,
    epochs: EpochMonotoneMonitor,
    liveness: Vec<LivenessMonitor>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    /// Violation counts per monitor, including zeros.
    pub counts: BTreeMap<Monitor, usize>,
}

impl Report {
    pub fn count(&self, m: Monitor) -> usize {
        self.counts.get(&m).copied().unwrap_or(0)
    }
}

impl MonitorSet {
    pub fn new(honest: Vec<bool>) -> Self {
        MonitorSet {
            consistency: ConsistencyMonitor::new(honest.clone()),
            uniqueness: UniquenessMonitor::new(honest.clone()),
            neighbor: NeighborLengthMonitor::new(honest.clone()),
            epochs: EpochMonotoneMonitor::new(honest),
            liveness: Vec::new(),
        }
    }

    pub fn with_liveness(mut self, windows: &[Window], timing: &Timing, f: u64) -> Self {
        let honest = self.epochs.honest.clone();
        self.liveness.extend(
            windows
                .iter()
                .map(|w| LivenessMonitor::new(honest.clone(), *w, timing, f)),
        );
        self
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        self.consistency.observe(r);
        self.uniqueness.observe(r);
        self.neighbor.observe(r);
        self.epochs.observe(r);
        for l in &mut self.liveness {
            l.observe(r);
        }
    }

    pub fn finish(self) -> Report {
        let mut report = Report::default();
        for m in [
            Monitor::Consistency,
            Monitor::Uniqueness,
            Monitor::NeighborLength,
            Monitor::EpochMonotone,
        ] {
            report.counts.insert(m, 0);
        }
        let add = |report: &mut Report, vs: Vec<Violation>| {
            for v in vs {
                *report.counts.entry(v.kind).or_default() += 1;
                report.violations.push(v);
            }
        };
        add(&mut report, self.consistency.finish());
        add(&mut report, self.uniqueness.finish());
        add(&mut report, self.neighbor.finish());
        add(&mut report, self.epochs.finish());
        for l in self.liveness {
            let w = l.window;
            match l.finish() {
                LivenessOutcome::Checked(vs) => {
                    report.counts.entry(Monitor::Liveness).or_default();
                    add(&mut report, vs);
                }
                LivenessOutcome::Skipped { required, actual } => report.warnings.push(format!(
                    "liveness check skipped for window [{}, {}]: length {actual} is below the required {required}",
                    w.start(),
                    w.end()
                )),
            }
        }
        report
    }
}

pub fn check_consistency(trace: &[TraceRecord], honest: Vec<bool>) -> Vec<Violation> {
    let mut m = ConsistencyMonitor::new(honest);
    trace.iter().for_each(|r| m.observe(r));
    m.finish()
}

pub fn check_uniqueness(trace: &[TraceRecord], honest: Vec<bool>) -> Vec<Violation> {
    let mut m = UniquenessMonitor::new(honest);
    trace.iter().for_each(|r| m.observe(r));
    m.finish()
}

pub fn check_neighbor_length(trace: &[TraceRecord], honest: Vec<bool>) -> Vec<Violation> {
    let mut m = NeighborLengthMonitor::new(honest);
    trace.iter().for_each(|r| m.observe(r));
    m.finish()
}

pub fn check_epoch_monotone(trace: &[TraceRecord], honest: Vec<bool>) -> Vec<Violation> {
    let mut m = EpochMonotoneMonitor::new(honest);
    trace.iter().for_each(|r| m.observe(r));
    m.finish()
}

pub fn check_liveness_window(
    trace: &[TraceRecord],
    honest: Vec<bool>,
    window: Window,
    timing: &Timing,
    f: u64,
) -> LivenessOutcome {
    let mut m = LivenessMonitor::new(honest, window, timing, f);
    trace.iter().for_each(|r| m.observe(r));
    m.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_with_defaults() {
        let t = Timing::default();
        assert_eq!(liveness_bound(&t, 1), Time::from_units(588.0));
        assert_eq!(liveness_bound(&t, 0), Time::from_units(546.0));
        assert_eq!(liveness_bound(&t, 2), Time::from_units(630.0));
    }

    #[test]
    fn neighbor_lengths() {
        assert_eq!(NeighborLengthMonitor::check_lengths(&[5, 4]), None);
        assert_eq!(NeighborLengthMonitor::check_lengths(&[5, 3, 3]), Some(0));
        assert_eq!(NeighborLengthMonitor::check_lengths(&[3, 5, 3]), Some(1));
        assert_eq!(NeighborLengthMonitor::check_lengths(&[5, 5, 0]), None);
        assert_eq!(NeighborLengthMonitor::check_lengths(&[7]), None);
    }
}
