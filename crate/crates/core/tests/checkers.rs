use pipelet::checkers::{
    check_consistency, check_epoch_monotone, check_liveness_window, check_neighbor_length,
    check_uniqueness, liveness_bound, LivenessOutcome, Monitor, MonitorSet,
};
use pipelet::simnet::{run, RecordKind, SimConfig, TraceRecord, Window};
use pipelet::time::{Time, Timing};

fn rec(
    t: f64,
    kind: RecordKind,
    node: u32,
    epoch: u64,
    seq: u64,
    block: &str,
    len: u64,
) -> TraceRecord {
    let mut r = TraceRecord::new(Time::from_units(t), kind, node, epoch);
    r.seq = Some(seq);
    r.block = Some(block.repeat(64 / block.len()));
    r.len = Some(len);
    r
}

fn fin(t: f64, node: u32, block: &str, len: u64) -> TraceRecord {
    rec(t, RecordKind::Finalize, node, 1, len, block, len)
}

fn notar(t: f64, node: u32, epoch: u64, seq: u64, block: &str, len: u64) -> TraceRecord {
    rec(t, RecordKind::Notarize, node, epoch, seq, block, len)
}

fn epoch(t: f64, node: u32, e: u64) -> TraceRecord {
    TraceRecord::new(Time::from_units(t), RecordKind::Epoch, node, e)
}

#[test]
fn consistency_fires_once_per_diverging_pair() {
    let trace = vec![
        fin(1.0, 1, "a", 1),
        fin(1.0, 2, "a", 1),
        fin(2.0, 1, "b", 2),
        fin(2.5, 2, "c", 2),
        fin(3.0, 2, "d", 3),
    ];
    let v = check_consistency(&trace, vec![true; 4]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, Monitor::Consistency);
    assert_eq!(v[0].nodes, vec![1, 2]);
    assert!(v[0].detail.contains(&"b".repeat(12)) && v[0].detail.contains(&"c".repeat(12)));
    // agreeing chains of different lengths are fine
    let ok = vec![
        fin(1.0, 1, "a", 1),
        fin(2.0, 1, "b", 2),
        fin(3.0, 2, "a", 1),
    ];
    assert!(check_consistency(&ok, vec![true; 4]).is_empty());
}

#[test]
fn consistency_ignores_byzantine_nodes() {
    let trace = vec![fin(1.0, 1, "a", 1), fin(1.0, 3, "b", 1)];
    assert!(check_consistency(&trace, vec![true, true, false, true]).is_empty());
    assert_eq!(check_consistency(&trace, vec![true; 4]).len(), 1);
}

#[test]
fn uniqueness_fires_on_conflicting_slot() {
    let trace = vec![
        notar(1.0, 1, 2, 3, "a", 5),
        notar(1.5, 2, 2, 3, "a", 5),
        notar(2.0, 3, 2, 3, "b", 5),
    ];
    let v = check_uniqueness(&trace, vec![true; 4]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].nodes, vec![1, 3]);
    let ok = vec![notar(1.0, 1, 2, 3, "a", 5), notar(2.0, 1, 2, 4, "b", 6)];
    assert!(check_uniqueness(&ok, vec![true; 4]).is_empty());
}

#[test]
fn neighbor_length_fires_when_one_node_runs_ahead() {
    let trace = vec![
        notar(1.0, 1, 1, 1, "a", 1),
        notar(1.0, 2, 1, 1, "a", 1),
        notar(2.0, 1, 1, 2, "b", 2),
        notar(3.0, 1, 1, 3, "c", 3),
    ];
    let v = check_neighbor_length(&trace, vec![true, true, true]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, Monitor::NeighborLength);
    assert_eq!(v[0].nodes, vec![1]);
    assert!(check_neighbor_length(&trace[..3], vec![true, true, true]).is_empty());
}

#[test]
fn epoch_monotone_fires_on_regression() {
    let trace = vec![
        epoch(1.0, 1, 2),
        epoch(2.0, 1, 3),
        epoch(3.0, 1, 2),
        epoch(3.0, 2, 5),
    ];
    let v = check_epoch_monotone(&trace, vec![true, true]);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].nodes, vec![1]);
    assert!(check_epoch_monotone(&trace, vec![false, true]).is_empty());
}

#[test]
fn liveness_fires_on_stalled_node_and_skips_short_windows() {
    let timing = Timing::default();
    let need = liveness_bound(&timing, 0).as_units();
    assert_eq!(need, 546.0);
    let w = Window::units(100.0, 100.0 + need);
    let trace = vec![
        fin(50.0, 1, "a", 1),
        fin(50.0, 2, "a", 1),
        fin(300.0, 1, "b", 2),
    ];
    match check_liveness_window(&trace, vec![true, true], w, &timing, 0) {
        LivenessOutcome::Checked(v) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].nodes, vec![2]);
        }
        other => panic!("{other:?}"),
    }
    let short = Window::units(100.0, 200.0);
    assert!(matches!(
        check_liveness_window(&trace, vec![true, true], short, &timing, 0),
        LivenessOutcome::Skipped { .. }
    ));
}

#[test]
fn monitor_set_reports_counts_and_warnings() {
    let mut m = MonitorSet::new(vec![true; 4]).with_liveness(
        &[Window::units(0.0, 10.0)],
        &Timing::default(),
        1,
    );
    for r in [
        fin(1.0, 1, "a", 1),
        fin(1.0, 2, "b", 1),
        epoch(2.0, 3, 4),
        epoch(3.0, 3, 1),
    ] {
        m.observe(&r);
    }
    let report = m.finish();
    assert_eq!(report.count(Monitor::Consistency), 1);
    assert_eq!(report.count(Monitor::EpochMonotone), 1);
    assert_eq!(report.count(Monitor::Uniqueness), 0);
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn honest_simulation_is_clean() {
    let cfg = SimConfig {
        n: 7,
        duration: Time::from_units(300.0),
        ..SimConfig::default()
    };
    let res = run(&cfg).unwrap();
    let mut m = MonitorSet::new(cfg.honest_mask());
    res.trace.iter().for_each(|r| m.observe(r));
    assert!(m.finish().violations.is_empty());
}
