use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pipelet::analysis::{table, FRule, Protocol, Table};
use pipelet::checkers::MonitorSet;
use pipelet::experiment::{
    execute_to_file, sweep_csv, ByzantineEntry, DelaySpec, RunConfig, StrategySpec, Summary,
    SweepGrid,
};
use pipelet::simnet::{metrics, read_trace, ProtocolKind, SimConfig, Window};
use pipelet::time::{Time, Timing};

/// Pipelet consensus simulator and analysis tools.
#[derive(Parser, Debug)]
#[command(name = "pipelet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// RNG seed (run and sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output: trace file for run, CSV for sweep.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Structured JSON summary output.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
    /// Print nothing but errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation.
    Run(RunArgs),
    /// Run a grid of simulations and emit one CSV row per cell.
    Sweep(SweepArgs),
    /// Check a stored trace against every monitor.
    Check(CheckArgs),
    /// Print closed-form message counts.
    Formulas(FormulaArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<ProtocolKind>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Number of Byzantine nodes, assigned to ids 1..=count.
    #[arg(long)]
    byzantine: Option<usize>,
    /// Strategy for the --byzantine nodes.
    #[arg(long, default_value = "silent_proposer")]
    strategy: String,
    /// Stall the first f proposers after their first block.
    #[arg(long)]
    failure: Option<usize>,
    /// `fixed:<d>` or `exp:<scale>`.
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    duration: Option<f64>,
    /// Synchrony window `start:end`; repeatable.
    #[arg(long = "window", value_parser = parse_window)]
    windows: Vec<[f64; 2]>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Base TOML configuration for parameters the grid does not vary.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "pipelet,streamlet,pala")]
    protocols: Vec<ProtocolKind>,
    #[arg(long, value_delimiter = ',', required = true)]
    nodes: Vec<usize>,
    /// Exponential delay scales.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    scales: Vec<f64>,
    /// Seeds per cell; defaults to --seed or 1.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Write one trace file per cell into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    trace: PathBuf,
    /// Byzantine node ids, excluded from every check.
    #[arg(long, value_delimiter = ',')]
    byzantine: Vec<u32>,
    /// Network size; inferred from the trace when absent.
    #[arg(long)]
    nodes: Option<usize>,
    /// Synchrony window `start:end` to check liveness over; repeatable.
    #[arg(long = "window", value_parser = parse_window)]
    windows: Vec<[f64; 2]>,
    /// Faulty count for the liveness bound; defaults to the Byzantine count.
    #[arg(long)]
    f: Option<u64>,
    /// Run length used for the metrics; defaults to the last record time.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
struct FormulaArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<u64>,
    /// Fixed faulty count; defaults to floor((n-1)/3).
    #[arg(long)]
    f: Option<u64>,
    /// PBFT checkpoint constant.
    #[arg(long)]
    c: Option<u64>,
    /// EBFT checkpoint requesters.
    #[arg(long)]
    k: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    protocol: Vec<Protocol>,
    /// Write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:end, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

enum Failure {
    Usage(String),
    Violations,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn say(common: &Common, line: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", line.as_ref());
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn report_summary(common: &Common, s: &Summary) {
    say(
        common,
        format!(
            "messages_per_finalized: {}",
            fmt_opt(s.messages_per_finalized)
        ),
    );
    say(
        common,
        format!("time_per_finalized: {}", fmt_opt(s.time_per_finalized)),
    );
    say(
        common,
        format!(
            "marginal_messages_per_finalized: {}",
            fmt_opt(s.marginal_messages_per_finalized)
        ),
    );
    say(
        common,
        format!("finalized: {}  messages: {}", s.finalized, s.messages_total),
    );
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    for v in &s.violations {
        eprintln!("violation: {v}");
    }
}

fn cmd_run(args: RunArgs, common: &Common) -> CmdResult {
    let mut rc = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.protocol {
        rc.protocol = p;
    }
    if let Some(n) = args.nodes {
        rc.n = n;
    }
    if let Some(count) = args.byzantine {
        rc.byzantine = (1..=count as u32)
            .map(|node| ByzantineEntry {
                node,
                strategy: StrategySpec::Name(args.strategy.clone()),
            })
            .collect();
    }
    if args.failure.is_some() {
        rc.failure_scenario = args.failure;
    }
    if let Some(d) = args.delay {
        rc.delay = DelaySpec::Text(d);
    }
    if let Some(d) = args.duration {
        rc.duration = d;
    }
    if !args.windows.is_empty() {
        rc.synchrony_windows = args.windows;
    }
    if let Some(b) = args.batch {
        rc.batch = b;
    }
    if let Some(s) = common.seed {
        rc.seed = s;
    }
    let cfg = rc.sim_config()?;
    let trace_path = common
        .out
        .clone()
        .or(rc.output.trace.clone())
        .unwrap_or_else(|| PathBuf::from("trace.jsonl"));
    let summary_path = common
        .summary
        .clone()
        .or(rc.output.summary.clone())
        .unwrap_or_else(|| PathBuf::from("summary.json"));
    let outcome = execute_to_file(&cfg, &trace_path)?;
    write_file(&summary_path, &outcome.summary.to_json())?;
    report_summary(common, &outcome.summary);
    if outcome.summary.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn cmd_sweep(args: SweepArgs, common: &Common) -> CmdResult {
    let mut base = match &args.config {
        Some(p) => RunConfig::load(p)?.sim_config()?,
        None => SimConfig::default(),
    };
    if let Some(d) = args.duration {
        base.duration = Time::from_units(d);
    }
    let seeds = if args.seeds.is_empty() {
        vec![common.seed.unwrap_or(1)]
    } else {
        args.seeds
    };
    let grid = SweepGrid {
        protocols: args.protocols,
        ns: args.nodes,
        scales: args.scales,
        seeds,
        base,
    };
    if let Some(dir) = &args.trace_dir {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let rows = grid.run(args.trace_dir.as_deref())?;
    let csv = sweep_csv(&rows);
    match &common.out {
        Some(p) => write_file(p, &csv)?,
        None if !common.quiet => print!("{csv}"),
        None => {}
    }
    if let Some(p) = &common.summary {
        let all: Vec<&Summary> = rows.iter().map(|r| &r.summary).collect();
        write_file(p, &serde_json::to_string_pretty(&all)?)?;
    }
    let bad: usize = rows.iter().map(|r| r.summary.violations.len()).sum();
    if bad == 0 {
        Ok(())
    } else {
        eprintln!("{bad} violations across the sweep");
        Err(Failure::Violations)
    }
}

fn cmd_check(args: CheckArgs, common: &Common) -> CmdResult {
    let file = fs::File::open(&args.trace).map_err(|e| format!("{}: {e}", args.trace.display()))?;
    let trace = read_trace(std::io::BufReader::new(file))
        .map_err(|e| format!("{}: {e}", args.trace.display()))?;
    let inferred = trace
        .iter()
        .flat_map(|r| std::iter::once(r.node).chain(r.peer))
        .max()
        .unwrap_or(0) as usize;
    let n = args.nodes.unwrap_or(inferred).max(inferred);
    let mut honest = vec![true; n];
    for &b in &args.byzantine {
        match (b as usize).checked_sub(1).and_then(|i| honest.get_mut(i)) {
            Some(slot) => *slot = false,
            None => {
                return Err(Failure::Usage(format!(
                    "--byzantine: node {b} is not in 1..={n}"
                )))
            }
        }
    }
    let windows: Vec<Window> = args
        .windows
        .iter()
        .map(|[a, b]| Window::units(*a, *b))
        .collect();
    let f = args.f.unwrap_or(args.byzantine.len() as u64);
    let mut monitors =
        MonitorSet::new(honest.clone()).with_liveness(&windows, &Timing::default(), f);
    for r in &trace {
        monitors.observe(r);
    }
    let report = monitors.finish();
    let end = trace.last().map(|r| r.t).unwrap_or(Time::ZERO);
    let duration = args.duration.map(Time::from_units).unwrap_or(end);
    let m = metrics(&trace, honest, duration);
    for v in &report.violations {
        println!("violation: {v}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    say(
        common,
        format!(
            "{} records, {} violations; messages_per_finalized: {}, time_per_finalized: {}",
            trace.len(),
            report.violations.len(),
            fmt_opt(m.messages_per_finalized),
            fmt_opt(m.time_per_finalized)
        ),
    );
    if let Some(p) = &common.summary {
        let doc = json!({
            "violations": report.violations,
            "warnings": report.warnings,
            "counts": report.counts.iter().map(|(k, v)| (k.to_string(), *v)).collect::<std::collections::BTreeMap<_, _>>(),
            "metrics": m,
        });
        write_file(p, &serde_json::to_string_pretty(&doc)?)?;
    }
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn print_table(t: &Table<u64>) {
    let mut head = format!("{:<18}{:<10}", "protocol", "scenario");
    for (n, f) in &t.columns {
        head.push_str(&format!("{:>14}", format!("n={n} f={f}")));
    }
    println!("{}", head.trim_end());
    for r in &t.rows {
        for (name, vals) in [("normal", &r.normal), ("failure", &r.failure)] {
            let mut line = format!("{:<18}{:<10}", r.protocol.as_str(), name);
            for v in vals.iter() {
                line.push_str(&format!("{v:>14}"));
            }
            println!("{line}");
        }
    }
}

fn cmd_formulas(args: FormulaArgs, common: &Common) -> CmdResult {
    let protocols = if args.protocol.is_empty() {
        Protocol::ALL.to_vec()
    } else {
        args.protocol
    };
    let rule = args.f.map(FRule::Fixed).unwrap_or(FRule::MaxFaulty);
    let t: Table<u64> = table(&args.n, rule, args.c, args.k, &protocols)?;
    if !common.quiet {
        print_table(&t);
    }
    if let Some(p) = &args.csv {
        write_file(p, &t.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common;
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, &common),
        Command::Sweep(a) => cmd_sweep(a, &common),
        Command::Check(a) => cmd_check(a, &common),
        Command::Formulas(a) => cmd_formulas(a, &common),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
