use gan_sentinel_core::calibration::calibrate_thresholds;
use gan_sentinel_core::loss_patterns::{classify_window, DetectorConfig};
use gan_sentinel_core::metrics::{embed, fid, mean_ms_ssim, MetricsConfig, SsimParams};
use gan_sentinel_core::simulator::{
    emit_run, image_run, simulate_images, simulate_losses, ImageDistribution, ImageRunConfig, Scenario,
    ScenarioKind, SnapshotContent,
};
use gan_sentinel_core::telemetry::{load_image_dir, read_loss_log, slice_window, snapshot_dir};

fn quick_metrics() -> MetricsConfig {
    MetricsConfig { n_pairs: 10, n_samples: 40, ..Default::default() }
}

#[test]
fn ground_truth_on_twenty_seeds() {
    let cfg = DetectorConfig::default();
    for kind in ScenarioKind::CANONICAL {
        for seed in 0..20 {
            let sc = Scenario::new(kind, 1000, seed);
            let s = simulate_losses(&sc).unwrap();
            let w = slice_window(&s, sc.steady_state_end(), cfg.window as u64).unwrap();
            let ev = classify_window(&w.g_losses(), &w.d_losses(), &cfg).unwrap();
            assert_eq!(ev.kind, kind.steady_label(), "{kind} seed {seed}: {:?}", ev.evidence);
        }
    }
}

#[test]
fn diversity_decreases_with_mode_count() {
    let p = SsimParams::default();
    let score = |modes| {
        let set = simulate_images(&ImageDistribution::grid(modes, 64, 0.0).with_noise(0.02), 60, 7).unwrap();
        mean_ms_ssim(&set, 20, 7, &p).unwrap()
    };
    let (one, four, sixteen) = (score(1), score(4), score(16));
    assert!(one > four && four > sixteen, "{one} {four} {sixteen}");
}

#[test]
fn fid_separates_disjoint_distributions() {
    let fx = MetricsConfig::default().extractor;
    let a = ImageDistribution::grid(4, 32, 0.0).with_noise(0.02);
    let b = ImageDistribution::grid(4, 32, 0.5).with_noise(0.02);
    for seed in 0..3 {
        let x = embed(&simulate_images(&a, 80, seed).unwrap(), &fx).unwrap();
        let y = embed(&simulate_images(&a, 80, seed + 100).unwrap(), &fx).unwrap();
        let z = embed(&simulate_images(&b, 80, seed + 200).unwrap(), &fx).unwrap();
        assert!(fid(&x, &z).unwrap() > fid(&x, &y).unwrap());
    }
}

#[test]
fn seeds_move_mean_ms_ssim_only_slightly() {
    let set = simulate_images(&ImageDistribution::grid(16, 64, 0.0).with_noise(0.02), 100, 3).unwrap();
    let p = SsimParams::default();
    let a = mean_ms_ssim(&set, 50, 1, &p).unwrap();
    assert_eq!(a, mean_ms_ssim(&set, 50, 1, &p).unwrap());
    let b = mean_ms_ssim(&set, 50, 2, &p).unwrap();
    assert!((a - b).abs() < 0.1);
}

#[test]
fn calibration_is_reproducible_after_reload() {
    let sc = Scenario::new(ScenarioKind::Healthy, 100, 4);
    let run_cfg = ImageRunConfig { side: 32, train_images: 80, test_images: 40, snapshot_images: 40, ..Default::default() };
    let bundle = image_run(&sc, &run_cfg, &quick_metrics()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_run(&bundle, dir.path()).unwrap();
    let train = load_image_dir(&dir.path().join("train")).unwrap();
    let test = load_image_dir(&dir.path().join("test")).unwrap();
    assert_eq!(train.images(), bundle.train.as_ref().unwrap().images());
    let th = calibrate_thresholds(&train, &test, 4, &quick_metrics()).unwrap();
    assert_eq!(&th, bundle.thresholds.as_ref().unwrap());
    let b = gan_sentinel_core::effective_bests(&th);
    assert!(b.best_msssim <= th.msssim_th1 && b.best_msssim <= th.msssim_th2);
    assert!(b.best_fid <= th.fid_th1 && b.best_fid <= th.fid_th2);
    assert!(th.fid_th1 > 0.0 && th.fid_th2 > 0.0);
}

#[test]
fn image_run_round_trips_and_is_byte_identical() {
    let sc = Scenario::new(ScenarioKind::ModeCollapse, 100, 2);
    let run_cfg = ImageRunConfig { side: 32, train_images: 40, test_images: 20, snapshot_images: 20, ..Default::default() };
    let bundle = image_run(&sc, &run_cfg, &quick_metrics()).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_run(&bundle, d1.path()).unwrap();
    emit_run(&image_run(&sc, &run_cfg, &quick_metrics()).unwrap(), d2.path()).unwrap();
    assert_eq!(read_loss_log(&d1.path().join("loss.jsonl")).unwrap().records(), bundle.losses.records());
    for snap in &bundle.snapshots {
        let SnapshotContent::Images(set) = &snap.content else { panic!() };
        let loaded = load_image_dir(&snapshot_dir(&d1.path().join("snapshots"), snap.epoch)).unwrap();
        assert_eq!(loaded.images(), set.images());
    }
    for entry in walk(d1.path()) {
        let rel = entry.strip_prefix(d1.path()).unwrap();
        assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(d2.path().join(rel)).unwrap(), "{rel:?}");
    }
}

#[test]
fn collapsed_synthetic_images_are_less_diverse_than_train() {
    let sc = Scenario::new(ScenarioKind::ModeCollapse, 100, 5);
    let run_cfg = ImageRunConfig { side: 64, train_images: 60, test_images: 30, snapshot_images: 30, ..Default::default() };
    let m = quick_metrics();
    let bundle = image_run(&sc, &run_cfg, &m).unwrap();
    let SnapshotContent::Images(synth) = &bundle.snapshots[0].content else { panic!() };
    let synth_score = mean_ms_ssim(synth, m.n_pairs, 5, &m.ssim).unwrap();
    assert!(synth_score > bundle.thresholds.unwrap().msssim_th1);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}
