//! Message and finalization counters, fed one trace record at a time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{RecordKind, TraceRecord};
use crate::protocol::MsgKind;
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub messages_total: u64,
    pub messages_by_kind: BTreeMap<MsgKind, u64>,
    /// Distinct finalized blocks at the honest node with the fewest.
    pub finalized: u64,
    pub messages_per_finalized: Option<f64>,
    pub time_per_finalized: Option<f64>,
    /// Messages per block between finalizations of the slowest honest node,
    /// ignoring the first quarter of the run.
    pub marginal_messages_per_finalized: Option<f64>,
    /// Messages sent until the last honest node first finalizes, divided by
    /// the blocks it finalized at that moment.
    pub messages_to_first_finalized: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    t: Time,
    messages: u64,
    finalized: u64,
}

#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    honest: Vec<bool>,
    messages_total: u64,
    by_kind: BTreeMap<MsgKind, u64>,
    // last point per node at each instant with a finalize record
    points: Vec<Vec<Point>>,
    finalized: Vec<u64>,
}

impl MetricsAccumulator {
    /// `honest[i]` says whether node `i + 1` is honest.
    pub fn new(honest: Vec<bool>) -> MetricsAccumulator {
        let n = honest.len();
        MetricsAccumulator {
            honest,
            messages_total: 0,
            by_kind: BTreeMap::new(),
            points: vec![Vec::new(); n],
            finalized: vec![0; n],
        }
    }

    pub fn record(&mut self, r: &TraceRecord) {
        match r.kind {
            RecordKind::Send => {
                self.messages_total += 1;
                if let Some(k) = r.msg {
                    *self.by_kind.entry(k).or_default() += 1;
                }
            }
            RecordKind::Finalize => {
                let Some(i) = (r.node as usize).checked_sub(1) else {
                    return;
                };
                if i >= self.finalized.len() {
                    return;
                }
                self.finalized[i] += 1;
                let p = Point {
                    t: r.t,
                    messages: self.messages_total,
                    finalized: self.finalized[i],
                };
                match self.points[i].last_mut() {
                    Some(last) if last.t == r.t && last.messages == p.messages => *last = p,
                    _ => self.points[i].push(p),
                }
            }
            _ => {}
        }
    }

    pub fn messages_total(&self) -> u64 {
        self.messages_total
    }

    fn slowest_honest(&self) -> Option<usize> {
        (0..self.honest.len())
            .filter(|&i| self.honest[i])
            .min_by_key(|&i| (self.finalized[i], i))
    }

    pub fn finish(&self, duration: Time) -> Metrics {
        let slowest = self.slowest_honest();
        let finalized = slowest.map(|i| self.finalized[i]).unwrap_or(0);
        let ratio = |x: f64| (finalized > 0).then(|| x / finalized as f64);

        let marginal = slowest.and_then(|i| {
            let start = Time(duration.0 / 4);
            let pts: Vec<&Point> = self.points[i].iter().filter(|p| p.t >= start).collect();
            let (first, last) = (pts.first()?, pts.last()?);
            let blocks = last.finalized - first.finalized;
            (blocks > 0).then(|| (last.messages - first.messages) as f64 / blocks as f64)
        });

        let first_finalized = (0..self.honest.len())
            .filter(|&i| self.honest[i])
            .map(|i| self.points[i].first().copied())
            .collect::<Option<Vec<_>>>()
            .and_then(|firsts| firsts.into_iter().max_by_key(|p| (p.t, p.messages)))
            .map(|p| p.messages as f64 / p.finalized as f64);

        Metrics {
            messages_total: self.messages_total,
            messages_by_kind: self.by_kind.clone(),
            finalized,
            messages_per_finalized: ratio(self.messages_total as f64),
            time_per_finalized: ratio(duration.as_units()),
            marginal_messages_per_finalized: marginal,
            messages_to_first_finalized: first_finalized,
        }
    }
}

/// Metrics of a recorded trace.
pub fn metrics(trace: &[TraceRecord], honest: Vec<bool>, duration: Time) -> Metrics {
    let mut acc = MetricsAccumulator::new(honest);
    for r in trace {
        acc.record(r);
    }
    acc.finish(duration)
}
