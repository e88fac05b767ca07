//! End-to-end replays of simulated runs through the detectors and sentinel.

use gan_sentinel_core::loss_patterns::{classify_series, segments, DetectorConfig, PathologyKind};
use gan_sentinel_core::sentinel::{SentinelConfig, SentinelState, Status, StopReason};
use gan_sentinel_core::simulator::{
    emit_run, loss_run, scripted_run, RunBundle, Scenario, ScenarioKind, Script, SnapshotContent,
};
use gan_sentinel_core::telemetry::{parse_loss_log, read_loss_log, LogFormat};
use gan_sentinel_core::{StopDecision, Thresholds};

fn replay(bundle: &RunBundle, cfg: SentinelConfig) -> StopDecision {
    let th = bundle
        .thresholds
        .clone()
        .unwrap_or_else(|| Thresholds::from_values(0.5, 0.5, 10.0, 10.0));
    let mut s = SentinelState::new(cfg, &th).unwrap();
    let mut snaps = bundle.snapshots.iter().peekable();
    for rec in bundle.losses.records() {
        if s.observe_epoch(*rec).unwrap().status == Status::Stop {
            break;
        }
        if let Some(snap) = snaps.next_if(|s| s.epoch == rec.epoch) {
            let SnapshotContent::Metrics(m) = &snap.content else {
                panic!("image snapshots are not replayed here")
            };
            if s.observe_evaluation(*m).unwrap() == Status::Stop {
                break;
            }
        }
    }
    s.conclude()
}

fn mode_collapse(seed: u64) -> RunBundle {
    loss_run(&Scenario::new(ScenarioKind::ModeCollapse, 1000, seed)).unwrap()
}

#[test]
fn dcgan_script_stops_at_550() {
    let d = replay(&scripted_run(&Script::dcgan(), 0).unwrap(), SentinelConfig::default());
    assert_eq!((d.stop_epoch, d.reason, d.best_epoch), (550, StopReason::MetricStagnation, 350));
    assert!(d.stopped);
}

#[test]
fn msggan_script_stops_at_700() {
    let d = replay(&scripted_run(&Script::msggan(), 0).unwrap(), SentinelConfig::default());
    assert_eq!((d.stop_epoch, d.reason, d.best_epoch), (700, StopReason::MetricStagnation, 500));
}

#[test]
fn monotone_script_runs_to_max_epochs() {
    let d = replay(&scripted_run(&Script::monotone(), 0).unwrap(), SentinelConfig::default());
    assert_eq!((d.stop_epoch, d.reason), (1000, StopReason::MaxEpochsReached));
}

#[test]
fn healthy_run_never_stops_for_pathology() {
    let bundle = loss_run(&Scenario::new(ScenarioKind::Healthy, 1000, 3)).unwrap();
    let d = replay(&bundle, SentinelConfig::default());
    assert_eq!((d.stop_epoch, d.reason), (1000, StopReason::MaxEpochsReached));
}

#[test]
fn mode_collapse_stops_after_patience_pathological_epochs() {
    let window = DetectorConfig::default().window as u64;
    for seed in 0..3 {
        let mut last = 0;
        for patience in [50, 100, 200] {
            let cfg = SentinelConfig { patience, ..Default::default() };
            let d = replay(&mode_collapse(seed), cfg);
            assert_eq!(d.reason, StopReason::LossPathologyPersistence);
            // the fill epoch is the first of the `patience` pathological epochs
            assert_eq!(d.stop_epoch, window + patience - 1, "seed {seed} patience {patience}");
            assert!(d.stop_epoch >= last);
            last = d.stop_epoch;
        }
    }
}

#[test]
fn stagnation_stop_is_best_plus_patience_rounded_up() {
    for best in [50u64, 100, 350, 500, 600] {
        for patience in [50u64, 100, 120, 200] {
            let script = Script::peak_at("t", best, 1000);
            let cfg = SentinelConfig { patience, ..Default::default() };
            let d = replay(&scripted_run(&script, 0).unwrap(), cfg);
            let expect = (best + patience).div_ceil(50) * 50;
            if expect <= 1000 {
                assert_eq!((d.stop_epoch, d.reason), (expect, StopReason::MetricStagnation));
            } else {
                assert_eq!(d.reason, StopReason::MaxEpochsReached);
            }
        }
    }
}

fn timeline(kind: ScenarioKind, seed: u64) -> Vec<gan_sentinel_core::loss_patterns::Segment> {
    let cfg = DetectorConfig::default();
    let series = loss_run(&Scenario::new(kind, 1000, seed)).unwrap().losses;
    segments(&classify_series(&series, &cfg).unwrap())
}

/// Labels of segments longer than one window, in order.
fn dominant(segs: &[gan_sentinel_core::loss_patterns::Segment]) -> Vec<PathologyKind> {
    let mut out: Vec<PathologyKind> = Vec::new();
    for s in segs.iter().filter(|s| s.epochs > DetectorConfig::default().window) {
        if out.last() != Some(&s.kind) {
            out.push(s.kind);
        }
    }
    out
}

#[test]
fn mode_collapse_timeline() {
    for seed in 0..5 {
        let segs = timeline(ScenarioKind::ModeCollapse, seed);
        assert_eq!(dominant(&segs), vec![PathologyKind::ModeCollapse, PathologyKind::Instability]);
        let mc_end = segs
            .iter()
            .filter(|s| s.kind == PathologyKind::ModeCollapse)
            .map(|s| s.epoch_end)
            .max()
            .unwrap();
        assert!((450..=500).contains(&mc_end), "seed {seed}: {mc_end}");
    }
}

#[test]
fn non_convergence_timeline() {
    for seed in 0..5 {
        let segs = timeline(ScenarioKind::NonConvergence, seed);
        assert_eq!(dominant(&segs), vec![PathologyKind::ModeCollapse, PathologyKind::NonConvergence]);
        assert_eq!(segs.last().unwrap().kind, PathologyKind::NonConvergence);
    }
}

#[test]
fn healthy_timeline_is_stable() {
    let segs = timeline(ScenarioKind::Healthy, 1);
    // the first four epochs are too short to label
    assert_eq!(segs.len(), 2, "{segs:?}");
    assert_eq!(segs[0].kind, PathologyKind::Indeterminate);
    assert_eq!((segs[1].kind, segs[1].epoch_start, segs[1].epoch_end), (PathologyKind::Stable, 5, 1000));
}

#[test]
fn emitted_loss_log_round_trips() {
    let bundle = scripted_run(&Script::dcgan(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_run(&bundle, dir.path()).unwrap();
    let parsed = read_loss_log(&dir.path().join("loss.jsonl")).unwrap();
    assert_eq!(parsed.records(), bundle.losses.records());
    let text = std::fs::read(dir.path().join("loss.jsonl")).unwrap();
    let again = parse_loss_log(text.as_slice(), LogFormat::Jsonl).unwrap();
    assert_eq!(again.records(), bundle.losses.records());
}
