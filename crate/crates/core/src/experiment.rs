//! Run configuration files, single runs with monitors attached, and
//! parameter sweeps.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{failure_scenario, Strategy};
use crate::analysis::{failure_cost, CostModel, Protocol};
use crate::checkers::{MonitorSet, Report, Violation};
use crate::crypto::NodeId;
use crate::protocol::MsgKind;
use crate::simnet::{
    run_with, write_trace, ConfigError, DelayModel, Metrics, ProtocolKind, SimConfig, TraceRecord,
    Window,
};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelaySpec {
    /// `fixed:<d>` or `exp:<scale>`.
    Text(String),
    Model(DelayModel),
}

impl DelaySpec {
    pub fn model(&self) -> Result<DelayModel, ConfigError> {
        match self {
            DelaySpec::Text(s) => s.parse().map_err(|e| ConfigError(format!("delay: {e}"))),
            DelaySpec::Model(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    /// A strategy name with default parameters.
    Name(String),
    Full(Strategy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByzantineEntry {
    pub node: u32,
    pub strategy: StrategySpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

/// On-disk run configuration (TOML). Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub delta: f64,
    pub sec_units: f64,
    pub min_units: f64,
    pub delay: DelaySpec,
    pub synchrony_windows: Vec<[f64; 2]>,
    pub duration: f64,
    pub seed: u64,
    pub batch: usize,
    /// Make nodes `1..=f` stall after their first proposal.
    pub failure_scenario: Option<usize>,
    pub byzantine: Vec<ByzantineEntry>,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = SimConfig::default();
        RunConfig {
            protocol: d.protocol,
            n: d.n,
            delta: d.delta,
            sec_units: d.sec_units,
            min_units: d.min_units,
            delay: DelaySpec::Text("fixed:0.5".into()),
            synchrony_windows: Vec::new(),
            duration: d.duration.as_units(),
            seed: d.seed,
            batch: d.batch,
            failure_scenario: None,
            byzantine: Vec::new(),
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves names and defaults and validates the result.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError(format!(
                "duration: must be positive, got {}",
                self.duration
            )));
        }
        let mut windows = Vec::new();
        for [a, b] in &self.synchrony_windows {
            if !(a.is_finite() && b.is_finite() && *a >= 0.0 && a <= b) {
                return Err(ConfigError(format!(
                    "synchrony_windows: [{a}, {b}] is not an interval of non-negative times"
                )));
            }
            windows.push(Window::units(*a, *b));
        }
        let mut cfg = SimConfig {
            protocol: self.protocol,
            n: self.n,
            delta: self.delta,
            sec_units: self.sec_units,
            min_units: self.min_units,
            delay: self.delay.model()?,
            synchrony_windows: windows,
            duration: Time::from_units(self.duration),
            seed: self.seed,
            batch: self.batch,
            ..SimConfig::default()
        };
        if let Some(f) = self.failure_scenario {
            let assignment = failure_scenario(self.n, f)
                .map_err(|e| ConfigError(format!("failure_scenario: {e}")))?;
            cfg.byzantine.extend(assignment);
        }
        let ids: BTreeSet<NodeId> = self
            .byzantine
            .iter()
            .map(|b| NodeId(b.node))
            .chain(cfg.byzantine.keys().copied())
            .collect();
        let params = cfg.params();
        for b in &self.byzantine {
            let s = match &b.strategy {
                StrategySpec::Full(s) => s.clone(),
                StrategySpec::Name(name) => Strategy::with_defaults(name, self.n, &ids, &params)
                    .ok_or_else(|| {
                        ConfigError(format!(
                            "byzantine: unknown strategy {name:?} for node {}; expected one of {}",
                            b.node,
                            Strategy::NAMES.join(", ")
                        ))
                    })?,
            };
            if cfg.byzantine.insert(NodeId(b.node), s).is_some() {
                return Err(ConfigError(format!(
                    "byzantine: node {} assigned more than once",
                    b.node
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByzantineSummary {
    pub node: u32,
    pub strategy: String,
}

/// The structured result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub duration: f64,
    pub messages_total: u64,
    pub finalized: u64,
    pub messages_per_finalized: Option<f64>,
    pub time_per_finalized: Option<f64>,
    pub marginal_messages_per_finalized: Option<f64>,
    pub messages_to_first_finalized: Option<f64>,
    pub messages_by_kind: std::collections::BTreeMap<MsgKind, u64>,
    pub byzantine: Vec<ByzantineSummary>,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub report: Report,
    pub trace: Option<Vec<TraceRecord>>,
}

fn notes(cfg: &SimConfig, m: &Metrics) -> Vec<String> {
    let mut out = Vec::new();
    let timeouts = m
        .messages_by_kind
        .get(&MsgKind::Timeout)
        .copied()
        .unwrap_or(0);
    let syncs = m.messages_by_kind.get(&MsgKind::Sync).copied().unwrap_or(0);
    if cfg.protocol == ProtocolKind::Pipelet && timeouts + syncs > 0 {
        out.push(format!(
            "{timeouts} timeout and {syncs} sync messages: a node that completes a timeout \
             quorum rebroadcasts the aggregated Timeout to all peers, and the first Timeout a node \
             receives triggers a Sync of its unsynced notarized chain; the closed-form failure \
             count assumes neither"
        ));
        let f = cfg.f() as u64;
        if f > 0 {
            let model = CostModel::new(Protocol::Pipelet, cfg.n as u64, f);
            if let Ok(est) = failure_cost(&model) {
                out.push(format!(
                    "closed-form failure estimate for n={} f={f}: {est}",
                    cfg.n
                ));
            }
        }
    }
    out
}

/// Runs one simulation with every monitor attached. The trace is kept in
/// memory when `keep_trace` is set and streamed to `trace_out` if given.
pub fn execute(
    cfg: &SimConfig,
    keep_trace: bool,
    trace_out: Option<&mut dyn Write>,
) -> Result<Outcome, ConfigError> {
    cfg.validate()?;
    let mut monitors = MonitorSet::new(cfg.honest_mask()).with_liveness(
        &cfg.synchrony_windows,
        &cfg.timing(),
        cfg.f() as u64,
    );
    let mut kept = Vec::new();
    let mut writer = trace_out;
    let mut io_error = None;
    let run = run_with(cfg, |r| {
        monitors.observe(r);
        if keep_trace {
            kept.push(r.clone());
        }
        if let Some(w) = writer.as_mut() {
            if io_error.is_none() {
                if let Err(e) = write_trace(&mut **w, std::slice::from_ref(r)) {
                    io_error = Some(e);
                }
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(ConfigError(format!("writing trace: {e}")));
    }
    let report = monitors.finish();
    let m = run.metrics;
    let summary = Summary {
        protocol: cfg.protocol,
        n: cfg.n,
        f: cfg.f(),
        seed: cfg.seed,
        duration: cfg.duration.as_units(),
        messages_total: m.messages_total,
        finalized: m.finalized,
        messages_per_finalized: m.messages_per_finalized,
        time_per_finalized: m.time_per_finalized,
        marginal_messages_per_finalized: m.marginal_messages_per_finalized,
        messages_to_first_finalized: m.messages_to_first_finalized,
        messages_by_kind: m.messages_by_kind.clone(),
        byzantine: cfg
            .byzantine
            .iter()
            .filter(|(_, s)| **s != Strategy::Honest)
            .map(|(id, s)| ByzantineSummary {
                node: id.0,
                strategy: s.name().to_string(),
            })
            .collect(),
        violations: report.violations.clone(),
        warnings: report.warnings.clone(),
        notes: notes(cfg, &m),
    };
    Ok(Outcome {
        summary,
        report,
        trace: keep_trace.then_some(kept),
    })
}

/// Runs `cfg` and writes the trace to `path`.
pub fn execute_to_file(cfg: &SimConfig, path: &Path) -> Result<Outcome, ConfigError> {
    let file =
        fs::File::create(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let out = execute(cfg, false, Some(&mut w))?;
    w.flush()
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub protocols: Vec<ProtocolKind>,
    pub ns: Vec<usize>,
    /// Mean delays of the exponential model.
    pub scales: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template for everything not varied by the grid.
    pub base: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub scale: f64,
    pub seed: u64,
}

impl SweepCell {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_n{}_scale{}_seed{}",
            self.protocol, self.n, self.scale, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub summary: Summary,
}

impl SweepGrid {
    /// Cells in output order: protocol, then n, then scale, then seed.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &n in &self.ns {
                for &scale in &self.scales {
                    for &seed in &self.seeds {
                        out.push(SweepCell {
                            protocol,
                            n,
                            scale,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn config(&self, cell: &SweepCell) -> SimConfig {
        SimConfig {
            protocol: cell.protocol,
            n: cell.n,
            delay: DelayModel::exponential(cell.scale),
            seed: cell.seed,
            byzantine: Default::default(),
            ..self.base.clone()
        }
    }

    /// Runs every cell in parallel; rows come back in grid order. With
    /// `trace_dir` set each cell's trace is written there.
    pub fn run(&self, trace_dir: Option<&Path>) -> Result<Vec<SweepRow>, ConfigError> {
        let cells = self.cells();
        for c in &cells {
            self.config(c).validate()?;
        }
        cells
            .into_par_iter()
            .map(|cell| {
                let cfg = self.config(&cell);
                let outcome = match trace_dir {
                    Some(dir) => {
                        execute_to_file(&cfg, &dir.join(format!("{}.jsonl", cell.file_stem())))?
                    }
                    None => execute(&cfg, false, None)?,
                };
                Ok(SweepRow {
                    cell,
                    summary: outcome.summary,
                })
            })
            .collect()
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "protocol,n,scale,seed,messages_total,finalized,messages_per_finalized,time_per_finalized,violations";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.cell.protocol,
            r.cell.n,
            r.cell.scale,
            r.cell.seed,
            r.summary.messages_total,
            r.summary.finalized,
            opt(r.summary.messages_per_finalized),
            opt(r.summary.time_per_finalized),
            r.summary.violations.len()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_names() {
        let text = r#"
            protocol = "pipelet"
            n = 7
            delay = "exp:2"
            synchrony_windows = [[100.0, 800.0]]
            duration = 900.0
            seed = 3

            [[byzantine]]
            node = 2
            strategy = "equivocate"

            [[byzantine]]
            node = 5
            strategy = { kind = "crash", at = 50.0 }
        "#;
        let rc = RunConfig::from_toml(text).unwrap();
        let cfg = rc.sim_config().unwrap();
        assert_eq!(cfg.n, 7);
        assert_eq!(cfg.f(), 2);
        assert_eq!(cfg.delay, DelayModel::exponential(2.0));
        assert_eq!(
            cfg.byzantine[&NodeId(5)],
            Strategy::Crash {
                at: Time::from_units(50.0)
            }
        );
        match &cfg.byzantine[&NodeId(2)] {
            Strategy::Equivocate { a, b } => {
                assert!(a.is_disjoint(b));
                assert!(!a.contains(&NodeId(2)) && !a.contains(&NodeId(5)));
            }
            s => panic!("{s:?}"),
        }
        let again = RunConfig::from_toml(&rc.to_toml()).unwrap();
        assert_eq!(again, rc);
    }

    #[test]
    fn field_level_errors() {
        let err = |t: &str| {
            RunConfig::from_toml(t)
                .and_then(|c| c.sim_config())
                .unwrap_err()
                .0
        };
        assert!(err("n = 0").contains("n must be at least 1"));
        assert!(err("sec_units = 3.0").contains("sec_units"));
        assert!(err("delay = \"gauss:1\"").starts_with("delay"));
        assert!(err("nodes = 4").contains("unknown field"));
        assert!(err("[[byzantine]]\nnode = 1\nstrategy = \"sneaky\"").contains("unknown strategy"));
        assert!(err("failure_scenario = 2").starts_with("failure_scenario"));
    }

    #[test]
    fn piecewise_delay_table() {
        let text = r#"
            [delay]
            kind = "piecewise"
            segments = [
                { window = [0.0, 100.0], model = { kind = "exponential", scale = 3.0 } },
                { window = [100.0, 1000.0], model = { kind = "fixed", delay = 0.5 } },
            ]
        "#;
        let cfg = RunConfig::from_toml(text).unwrap().sim_config().unwrap();
        match cfg.delay {
            DelayModel::Piecewise { segments } => {
                assert_eq!(segments.len(), 2);
                assert_eq!(segments[1].model, DelayModel::fixed(0.5));
            }
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn failure_scenario_config() {
        let rc = RunConfig {
            n: 7,
            failure_scenario: Some(2),
            ..RunConfig::default()
        };
        let cfg = rc.sim_config().unwrap();
        assert_eq!(cfg.f(), 2);
        assert_eq!(cfg.byzantine[&NodeId(1)], Strategy::StallingProposer);
        assert_eq!(cfg.byzantine[&NodeId(2)], Strategy::StallingProposer);
    }

    #[test]
    fn sweep_rows_in_grid_order() {
        let grid = SweepGrid {
            protocols: vec![ProtocolKind::Pipelet, ProtocolKind::Pala],
            ns: vec![4, 5],
            scales: vec![0.5],
            seeds: vec![1],
            base: SimConfig {
                duration: Time::from_units(100.0),
                ..SimConfig::default()
            },
        };
        let rows = grid.run(None).unwrap();
        let order: Vec<_> = rows.iter().map(|r| (r.cell.protocol, r.cell.n)).collect();
        assert_eq!(
            order,
            vec![
                (ProtocolKind::Pipelet, 4),
                (ProtocolKind::Pipelet, 5),
                (ProtocolKind::Pala, 4),
                (ProtocolKind::Pala, 5)
            ]
        );
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
    }
}
