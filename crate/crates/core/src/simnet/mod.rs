//! Seeded discrete-event network simulator.
//!
//! Links are reliable and FIFO. Each message's delay is drawn from the
//! configured model using a ChaCha8 generator seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`, one draw per envelope in send order,
//! so a `(config, seed)` pair always yields the same trace.

mod delay;
mod metrics;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use delay::{sample_delay, synchrony_deadline, DelayModel, Segment, Window};
pub use metrics::{metrics, Metrics, MetricsAccumulator};
pub use trace::{read_trace, trace_to_string, write_trace, RecordKind, TraceRecord};

use crate::adversary::{AdversaryNode, Strategy};
use crate::baselines::{PalaNode, StreamletNode};
use crate::crypto::{NodeId, Pki};
use crate::protocol::{
    Dest, Input, Message, NodeParams, NodeSnapshot, NodeState, Process, ProtocolEvent, TimerKind,
    Transition,
};
use crate::time::{Time, Timing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Pipelet,
    Streamlet,
    Pala,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Pipelet => "pipelet",
            ProtocolKind::Streamlet => "streamlet",
            ProtocolKind::Pala => "pala",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipelet" => Ok(ProtocolKind::Pipelet),
            "streamlet" => Ok(ProtocolKind::Streamlet),
            "pala" => Ok(ProtocolKind::Pala),
            _ => Err(format!("unknown protocol {s:?}")),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub byzantine: BTreeMap<NodeId, Strategy>,
    /// Time units per Δ.
    pub delta: f64,
    /// Δ per 1sec.
    pub sec_units: f64,
    /// Δ per 1min.
    pub min_units: f64,
    pub delay: DelayModel,
    pub synchrony_windows: Vec<Window>,
    pub duration: Time,
    pub seed: u64,
    /// Transactions per block.
    pub batch: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            protocol: ProtocolKind::Pipelet,
            n: 4,
            byzantine: BTreeMap::new(),
            delta: 1.0,
            sec_units: 5.0,
            min_units: 30.0,
            delay: DelayModel::fixed(0.5),
            synchrony_windows: Vec::new(),
            duration: Time::from_units(1000.0),
            seed: 0,
            batch: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl SimConfig {
    pub fn timing(&self) -> Timing {
        Timing::new(self.delta, self.sec_units, self.min_units)
    }

    pub fn params(&self) -> NodeParams {
        NodeParams {
            batch: self.batch,
            ..NodeParams::new(self.n, self.timing())
        }
    }

    /// Number of Byzantine nodes other than those configured `Honest`.
    pub fn f(&self) -> usize {
        self.byzantine
            .values()
            .filter(|s| **s != Strategy::Honest)
            .count()
    }

    pub fn is_honest(&self, id: NodeId) -> bool {
        self.byzantine
            .get(&id)
            .is_none_or(|s| *s == Strategy::Honest)
    }

    pub fn honest_mask(&self) -> Vec<bool> {
        (1..=self.n as u32)
            .map(|i| self.is_honest(NodeId(i)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.n == 0 {
            return err("n must be at least 1".into());
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return err(format!("delta must be positive, got {}", self.delta));
        }
        if self.sec_units.is_nan() || self.sec_units < 5.0 {
            return err(format!(
                "sec_units must be at least 5, got {}",
                self.sec_units
            ));
        }
        if self.min_units.is_nan() || self.min_units < 30.0 {
            return err(format!(
                "min_units must be at least 30, got {}",
                self.min_units
            ));
        }
        if self.duration == Time::ZERO {
            return err("duration must be positive".into());
        }
        if self.batch == 0 {
            return err("batch must be at least 1".into());
        }
        self.delay.validate().map_err(ConfigError)?;
        for w in &self.synchrony_windows {
            if w.end() < w.start() {
                return err(format!(
                    "synchrony window [{}, {}] is reversed",
                    w.start(),
                    w.end()
                ));
            }
        }
        for id in self.byzantine.keys() {
            if id.0 == 0 || id.0 as usize > self.n {
                return err(format!("byzantine node {id} outside 1..={}", self.n));
            }
        }
        let f = self.f();
        if 3 * f >= self.n && f > 0 {
            return err(format!(
                "{f} byzantine nodes need n > 3f, got n = {}",
                self.n
            ));
        }
        if self.protocol != ProtocolKind::Pipelet && self.n < 2 {
            return err(format!("{} runs need at least 2 nodes", self.protocol));
        }
        if self.protocol != ProtocolKind::Pipelet && f > 0 {
            return err(format!("{} runs support honest nodes only", self.protocol));
        }
        Ok(())
    }

    pub fn build_processes(&self) -> Vec<Box<dyn Process>> {
        let pki = Arc::new(Pki::new(self.n));
        let params = self.params();
        (1..=self.n as u32)
            .map(NodeId)
            .map(|id| -> Box<dyn Process> {
                match self.protocol {
                    ProtocolKind::Pipelet => match self.byzantine.get(&id) {
                        Some(s) if *s != Strategy::Honest => Box::new(AdversaryNode::init(
                            s.clone(),
                            id,
                            params,
                            pki.clone(),
                            Time::ZERO,
                        )),
                        _ => Box::new(NodeState::init(id, params, pki.clone(), Time::ZERO)),
                    },
                    ProtocolKind::Streamlet => {
                        Box::new(StreamletNode::init(id, params, pki.clone(), Time::ZERO))
                    }
                    ProtocolKind::Pala => {
                        Box::new(PalaNode::init(id, params, pki.clone(), Time::ZERO))
                    }
                }
            })
            .collect()
    }
}

/// A message in flight.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub send_time: Time,
    pub deliver_time: Time,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Arc<Message>,
    pub link_seq: u64,
}

#[derive(Debug)]
enum EventBody {
    Deliver(Envelope),
    Timer {
        node: NodeId,
        kind: TimerKind,
        id: u64,
    },
}

#[derive(Debug)]
struct Event {
    // (time, deliveries before timers, sender, receiver, link sequence, insertion)
    key: (Time, u8, u32, u32, u64, u64),
    body: EventBody,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        other.key.cmp(&self.key)
    }
}

/// The end state of a run.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub snapshots: Vec<NodeSnapshot>,
    pub metrics: Metrics,
    /// Envelopes still undelivered when the run stopped.
    pub in_flight: u64,
    pub events_processed: u64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub trace: Vec<TraceRecord>,
    pub run: SimRun,
}

struct Engine<'a, F: FnMut(&TraceRecord)> {
    cfg: &'a SimConfig,
    delta: Time,
    nodes: Vec<Box<dyn Process>>,
    queue: BinaryHeap<Event>,
    rng: ChaCha8Rng,
    link_last: Vec<Time>,
    link_seq: Vec<u64>,
    timer_ids: Vec<[u64; 4]>,
    counter: u64,
    in_flight: u64,
    processed: u64,
    acc: MetricsAccumulator,
    sink: F,
}

impl<F: FnMut(&TraceRecord)> Engine<'_, F> {
    fn emit(&mut self, r: TraceRecord) {
        self.acc.record(&r);
        (self.sink)(&r);
    }

    fn link(&self, from: NodeId, to: NodeId) -> usize {
        (from.0 as usize - 1) * self.cfg.n + (to.0 as usize - 1)
    }

    fn next_counter(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    fn send(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: &Arc<Message>,
        now: Time,
        proto: &TraceRecord,
    ) {
        let in_sync = self.cfg.synchrony_windows.iter().any(|w| w.contains(now));
        let mut delay = sample_delay(&self.cfg.delay, &mut self.rng, now, in_sync, self.delta);
        if let Some(deadline) = synchrony_deadline(&self.cfg.synchrony_windows, now, self.delta) {
            delay = delay.min(deadline - now);
        }
        let l = self.link(from, to);
        let deliver_time = (now + delay).max(self.link_last[l]);
        self.link_last[l] = deliver_time;
        self.link_seq[l] += 1;
        let link_seq = self.link_seq[l];
        let c = self.next_counter();
        self.queue.push(Event {
            key: (deliver_time, 0, from.0, to.0, link_seq, c),
            body: EventBody::Deliver(Envelope {
                send_time: now,
                deliver_time,
                from,
                to,
                payload: msg.clone(),
                link_seq,
            }),
        });
        self.in_flight += 1;
        let mut r = proto.clone();
        r.peer = Some(to.0);
        self.emit(r);
    }

    fn arm(&mut self, node: NodeId, kind: TimerKind, at: Time, now: Time) {
        let i = node.0 as usize - 1;
        let slot = kind.slot() as usize;
        self.timer_ids[i][slot] += 1;
        let id = self.timer_ids[i][slot];
        let c = self.next_counter();
        let at = at.max(now);
        self.queue.push(Event {
            key: (at, 1, node.0, node.0, 0, c),
            body: EventBody::Timer { node, kind, id },
        });
    }

    fn message_record(
        &self,
        t: Time,
        kind: RecordKind,
        node: NodeId,
        msg: &Message,
    ) -> TraceRecord {
        let (block, seq) = msg.block_ref();
        let mut r = TraceRecord::new(t, kind, node.0, self.nodes[node.0 as usize - 1].epoch());
        r.msg = Some(msg.kind());
        r.seq = seq;
        r.block = block.map(|b| b.to_hex());
        r
    }

    /// Runs one input and every loopback it triggers, all at `now`.
    fn dispatch(&mut self, node: NodeId, input: Input, now: Time) {
        let mut work = VecDeque::from([(node, input)]);
        while let Some((id, input)) = work.pop_front() {
            let i = id.0 as usize - 1;
            let tr: Transition = self.nodes[i].step(input, now);
            for ev in &tr.events {
                let r = match ev {
                    ProtocolEvent::Notarized {
                        block,
                        epoch,
                        seq,
                        len,
                    }
                    | ProtocolEvent::Finalized {
                        block,
                        epoch,
                        seq,
                        len,
                    } => {
                        let kind = if matches!(ev, ProtocolEvent::Notarized { .. }) {
                            RecordKind::Notarize
                        } else {
                            RecordKind::Finalize
                        };
                        let mut r = TraceRecord::new(now, kind, id.0, *epoch);
                        r.seq = Some(*seq);
                        r.block = Some(block.to_hex());
                        r.len = Some(*len);
                        r
                    }
                    ProtocolEvent::EpochAdvanced { epoch } => {
                        TraceRecord::new(now, RecordKind::Epoch, id.0, *epoch)
                    }
                };
                self.emit(r);
            }
            for req in &tr.timers {
                self.arm(id, req.kind, req.at, now);
            }
            for (dest, msg) in &tr.outbox {
                let proto = self.message_record(now, RecordKind::Send, id, msg);
                match dest {
                    Dest::Broadcast => {
                        for to in (1..=self.cfg.n as u32).map(NodeId).filter(|t| *t != id) {
                            self.send(id, to, msg, now, &proto);
                        }
                        work.push_back((
                            id,
                            Input::Message {
                                from: id,
                                msg: msg.clone(),
                            },
                        ));
                    }
                    Dest::Node(to) if *to == id => work.push_back((
                        id,
                        Input::Message {
                            from: id,
                            msg: msg.clone(),
                        },
                    )),
                    Dest::Node(to) => {
                        if to.0 >= 1 && to.0 as usize <= self.cfg.n {
                            self.send(id, *to, msg, now, &proto);
                        }
                    }
                }
            }
        }
    }

    fn run(mut self) -> SimRun {
        for i in 1..=self.cfg.n as u32 {
            self.dispatch(NodeId(i), Input::Start, Time::ZERO);
        }
        while let Some(top) = self.queue.peek() {
            let now = top.key.0;
            if now > self.cfg.duration {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.processed += 1;
            match ev.body {
                EventBody::Deliver(env) => {
                    self.in_flight -= 1;
                    let mut r = self.message_record(now, RecordKind::Deliver, env.to, &env.payload);
                    r.peer = Some(env.from.0);
                    self.emit(r);
                    self.dispatch(
                        env.to,
                        Input::Message {
                            from: env.from,
                            msg: env.payload,
                        },
                        now,
                    );
                }
                EventBody::Timer { node, kind, id } => {
                    let i = node.0 as usize - 1;
                    if self.timer_ids[i][kind.slot() as usize] != id {
                        continue;
                    }
                    let mut r =
                        TraceRecord::new(now, RecordKind::Timer, node.0, self.nodes[i].epoch());
                    r.msg = Some(kind.label());
                    self.emit(r);
                    self.dispatch(node, Input::Timer(kind), now);
                }
            }
        }
        SimRun {
            snapshots: self.nodes.iter().map(|n| n.snapshot()).collect(),
            metrics: self.acc.finish(self.cfg.duration),
            in_flight: self.in_flight,
            events_processed: self.processed,
        }
    }
}

/// Runs the simulation, handing every trace record to `sink` as it is
/// produced.
pub fn run_with<F: FnMut(&TraceRecord)>(cfg: &SimConfig, sink: F) -> Result<SimRun, ConfigError> {
    cfg.validate()?;
    let n = cfg.n;
    let engine = Engine {
        cfg,
        delta: Time::from_units(cfg.delta),
        nodes: cfg.build_processes(),
        queue: BinaryHeap::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        link_last: vec![Time::ZERO; n * n],
        link_seq: vec![0; n * n],
        timer_ids: vec![[0; 4]; n],
        counter: 0,
        in_flight: 0,
        processed: 0,
        acc: MetricsAccumulator::new(cfg.honest_mask()),
        sink,
    };
    Ok(engine.run())
}

/// Runs the simulation and keeps the whole trace.
pub fn run(cfg: &SimConfig) -> Result<SimResult, ConfigError> {
    let mut trace = Vec::new();
    let run = run_with(cfg, |r| trace.push(r.clone()))?;
    Ok(SimResult { trace, run })
}
