use gan_sentinel_core::loss_patterns::{
    classify_window, detect_constancy, detect_oscillation, detect_sharp_change, detrended_residual,
    least_squares_slope, DetectorConfig, Direction, PathologyKind,
};
use gan_sentinel_core::metrics::{fid, ms_ssim, sqrtm_psd, SsimParams};
use gan_sentinel_core::sentinel::{SentinelConfig, SentinelState, Status};
use gan_sentinel_core::telemetry::{slice_window, GrayImage, LossKind, LossRecord, LossSeries};
use gan_sentinel_core::{MetricsSnapshot, Thresholds};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn series(len: std::ops::Range<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

/// Two-pass regression oracle.
fn slope_oracle(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let tm = (0..xs.len()).map(|i| i as f64).sum::<f64>() / n;
    let xm = xs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, x) in xs.iter().enumerate() {
        num += (i as f64 - tm) * (x - xm);
        den += (i as f64 - tm).powi(2);
    }
    num / den
}

/// Residual oracle: prefix sums instead of per-window summation.
fn amplitude_oracle(xs: &[f64], half: usize) -> f64 {
    let mut prefix = vec![0.0];
    for x in xs {
        prefix.push(prefix.last().unwrap() + x);
    }
    let span = 2 * half + 1;
    let res: Vec<f64> = (half..xs.len() - half)
        .map(|i| xs[i] - (prefix[i + half + 1] - prefix[i - half]) / span as f64)
        .collect();
    res.iter().cloned().fold(f64::MIN, f64::max) - res.iter().cloned().fold(f64::MAX, f64::min)
}

/// Precedence rules restated from the detector outputs.
fn label_oracle(g: &[f64], d: &[f64], cfg: &DetectorConfig) -> PathologyKind {
    if g.len() < 5 {
        return PathologyKind::Indeterminate;
    }
    let gc = detect_constancy(g, cfg).unwrap();
    let dc = detect_constancy(d, cfg).unwrap();
    let gs = detect_sharp_change(g, cfg).unwrap();
    let ds = detect_sharp_change(d, cfg).unwrap();
    let full = g.len() >= cfg.window;
    let osc = full
        && detect_oscillation(g, cfg).unwrap().oscillating
        && detect_oscillation(d, cfg).unwrap().oscillating;
    let smooth = gs.max_jump < cfg.jump_threshold && ds.max_jump < cfg.jump_threshold;
    let g_up = gs.direction == Direction::Increase;
    if smooth && dc.mean < cfg.d_zero_eps && (g_up || gc.constant || (gs.direction == Direction::None && gs.slope >= 0.0)) {
        PathologyKind::ModeCollapse
    } else if smooth && g_up && ds.direction == Direction::Decrease {
        PathologyKind::ModeCollapse
    } else if osc {
        PathologyKind::NonConvergence
    } else if gc.constant && dc.constant && (gc.mean - 2.0 * dc.mean).abs() <= cfg.healthy_ratio_tol * gc.mean {
        PathologyKind::Stable
    } else if !smooth || (gc.constant && dc.constant) {
        PathologyKind::Instability
    } else {
        PathologyKind::Indeterminate
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn slope_matches_two_pass_oracle(xs in series(2..300, -50.0, 50.0)) {
        let s = detect_sharp_change(&xs, &DetectorConfig::default()).unwrap();
        prop_assert!((s.slope - slope_oracle(&xs)).abs() < 1e-12);
        prop_assert_eq!(s.slope, least_squares_slope(&xs));
    }

    #[test]
    fn amplitude_matches_oracle(xs in series(50..200, -5.0, 5.0)) {
        let cfg = DetectorConfig::default();
        let o = detect_oscillation(&xs, &cfg).unwrap();
        prop_assert!((o.amplitude - amplitude_oracle(&xs, cfg.detrend_half_span())).abs() < 1e-12);
    }

    #[test]
    fn oscillation_statistics_are_shift_invariant(xs in series(50..120, -1.0, 1.0), c in -1e3f64..1e3) {
        let cfg = DetectorConfig::default();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = detect_oscillation(&xs, &cfg).unwrap();
        let b = detect_oscillation(&shifted, &cfg).unwrap();
        prop_assert!((a.amplitude - b.amplitude).abs() < 1e-9);
        let ra = detrended_residual(&xs, cfg.detrend_half_span());
        // sign flips are only possible on residuals at rounding level
        if ra.iter().all(|r| r.abs() > 1e-9) {
            prop_assert_eq!(a.crossing_rate, b.crossing_rate);
        }
    }

    #[test]
    fn oscillation_verdict_is_shift_invariant_under_absolute_bound(
        xs in series(50..120, 0.0, 2.0),
        c in -1.0f64..2.0,
    ) {
        // means stay below abs_eps / rel_eps, where the constancy bound is absolute
        let cfg = DetectorConfig::default();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let ra = detrended_residual(&xs, cfg.detrend_half_span());
        prop_assume!(ra.iter().all(|r| r.abs() > 1e-9));
        prop_assert_eq!(
            detect_oscillation(&xs, &cfg).unwrap().oscillating,
            detect_oscillation(&shifted, &cfg).unwrap().oscillating
        );
    }

    #[test]
    fn constancy_scale_covariance(xs in series(2..100, 0.1, 10.0), k in 0.01f64..100.0) {
        let cfg = DetectorConfig { const_abs_eps: 0.0, ..Default::default() };
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        let a = detect_constancy(&xs, &cfg).unwrap();
        let b = detect_constancy(&scaled, &cfg).unwrap();
        prop_assert!((b.range - k * a.range).abs() <= 1e-9 * (1.0 + k * a.range));
        let margin = (a.range - cfg.const_rel_eps * a.mean.abs()).abs();
        if margin > 1e-9 * a.mean.abs() {
            prop_assert_eq!(a.constant, b.constant);
        }
    }

    #[test]
    fn classify_follows_precedence(
        g in series(1..80, 0.0, 3.0),
        dseed in series(80..81, 0.0, 1.5),
        noise in 0.0f64..1.0,
    ) {
        let cfg = DetectorConfig::default();
        let d: Vec<f64> = dseed[..g.len()].iter().map(|v| v * noise).collect();
        let ev = classify_window(&g, &d, &cfg).unwrap();
        prop_assert_eq!(ev.kind, label_oracle(&g, &d, &cfg));
        prop_assert!(ev.epoch_start <= ev.epoch_end);
        let e = ev.evidence;
        for v in [e.g_mean, e.d_mean, e.g_range, e.d_range, e.g_slope, e.d_slope, e.g_max_jump, e.d_max_jump] {
            prop_assert!(v.is_finite());
        }
        prop_assert_eq!(ev, classify_window(&g, &d, &cfg).unwrap());
    }

    #[test]
    fn ramp_with_collapsed_discriminator_is_mode_collapse(len in 50usize..1200) {
        let g: Vec<f64> = (0..len).map(|i| 5.0 * i as f64 / (len - 1) as f64).collect();
        let d = vec![0.01; len];
        prop_assert_eq!(classify_window(&g, &d, &DetectorConfig::default()).unwrap().kind, PathologyKind::ModeCollapse);
    }

    #[test]
    fn slice_window_stays_in_range(
        epochs in prop::collection::btree_set(0u64..500, 1..100),
        end in 0u64..520,
        width in 2u64..80,
    ) {
        let recs: Vec<LossRecord> = epochs.iter().map(|&e| LossRecord::new(e, 1.0, 0.5)).collect();
        let s = LossSeries::new(recs, LossKind::Other).unwrap();
        if let Ok(w) = slice_window(&s, end, width) {
            for e in w.epochs() {
                prop_assert!(e <= end && e + width > end);
            }
            let expected = epochs.iter().filter(|&&e| e <= end && e + width > end).count();
            prop_assert_eq!(w.len(), expected);
        }
    }

    #[test]
    fn byte_normalization_is_monotone(bytes in prop::collection::vec(any::<u8>(), 256)) {
        let img = GrayImage::from_bytes(16, 16, &bytes, 255).unwrap();
        for (a, pa) in bytes.iter().zip(img.pixels()) {
            prop_assert!((0.0..=1.0).contains(pa));
            for (b, pb) in bytes.iter().zip(img.pixels()) {
                prop_assert_eq!(a.cmp(b), pa.partial_cmp(pb).unwrap());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ms_ssim_identity_symmetry_range(a in series(1024..1025, 0.0, 1.0), b in series(1024..1025, 0.0, 1.0)) {
        let a = GrayImage::new(32, 32, a).unwrap();
        let b = GrayImage::new(32, 32, b).unwrap();
        let p = SsimParams::default();
        prop_assert_eq!(ms_ssim(&a, &a, &p).unwrap(), 1.0);
        let ab = ms_ssim(&a, &b, &p).unwrap();
        prop_assert!((ab - ms_ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn fid_identity_symmetry_permutation(
        a in series(30 * 4..30 * 4 + 1, -3.0, 3.0),
        b in series(25 * 4..25 * 4 + 1, -3.0, 3.0),
        rot in 1usize..25,
    ) {
        let fa = DMatrix::from_row_slice(30, 4, &a);
        let fb = DMatrix::from_row_slice(25, 4, &b);
        prop_assert!(fid(&fa, &fa).unwrap() <= 1e-6);
        let ab = fid(&fa, &fb).unwrap();
        prop_assert!((ab - fid(&fb, &fa).unwrap()).abs() < 1e-6);
        let perm_a = DMatrix::from_fn(30, 4, |r, c| fa[((r + rot) % 30, c)]);
        let perm_b = DMatrix::from_fn(25, 4, |r, c| fb[((r + rot) % 25, c)]);
        prop_assert!((ab - fid(&perm_a, &perm_b).unwrap()).abs() < 1e-6);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn sqrtm_reconstructs_well_conditioned_psd(vals in series(8 * 8..8 * 8 + 1, -1.0, 1.0), ridge in 1e-6f64..1.0) {
        let b = DMatrix::from_row_slice(8, 8, &vals);
        let m = b.transpose() * &b + DMatrix::identity(8, 8) * ridge;
        let r = sqrtm_psd(&m).unwrap();
        prop_assert!((&r * &r - &m).norm() / m.norm() < 1e-8);
    }
}

fn snap(epoch: u64, ms: f64, fid: f64) -> MetricsSnapshot {
    MetricsSnapshot { epoch, msssim_synth: ms, fid_train_synth: fid, sample_seed: 0, n_pairs: 50, n_samples: 100 }
}

/// Drives a sentinel over flat healthy losses with the given per-evaluation scores.
fn drive(scores: &[(f64, f64)], patience: u64, pathological: bool) -> (gan_sentinel_core::StopDecision, Vec<(f64, f64, u64)>) {
    let cfg = SentinelConfig { patience, ..Default::default() };
    let mut s = SentinelState::new(cfg, &Thresholds::from_values(0.5, 0.6, 10.0, 12.0)).unwrap();
    let mut trail = Vec::new();
    'run: for epoch in 1..=1000u64 {
        let rec = if pathological { LossRecord::new(epoch, 0.7875, 0.6125) } else { LossRecord::new(epoch, 1.0, 0.5) };
        if s.observe_epoch(rec).unwrap().status == Status::Stop {
            break;
        }
        if epoch % 50 == 0 {
            let (ms, fd) = scores[(epoch / 50 - 1) as usize];
            let st = s.observe_evaluation(snap(epoch, ms, fd)).unwrap();
            let d = s.decision();
            trail.push((d.best_msssim, d.best_fid, d.best_epoch));
            if st == Status::Stop {
                break 'run;
            }
        }
    }
    (s.conclude(), trail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sentinel_invariants(
        scores in prop::collection::vec((0.0f64..0.7, 0.0f64..15.0), 20),
        pathological in any::<bool>(),
    ) {
        let mut last_stop = 0;
        for patience in [50u64, 100, 200] {
            let (d, trail) = drive(&scores, patience, pathological);
            let (d2, _) = drive(&scores, patience, pathological);
            prop_assert_eq!(d, d2);
            prop_assert!(d.stop_epoch <= 1000);
            prop_assert!(d.stop_epoch >= last_stop);
            last_stop = d.stop_epoch;
            for w in trail.windows(2) {
                prop_assert!(w[1].0 <= w[0].0 && w[1].1 <= w[0].1 && w[1].2 >= w[0].2);
            }
            match d.reason {
                gan_sentinel_core::StopReason::MetricStagnation => {
                    prop_assert_eq!(d.stop_epoch, (d.best_epoch + patience).div_ceil(50) * 50);
                }
                gan_sentinel_core::StopReason::LossPathologyPersistence => {
                    // fill epoch 50 plus patience pathological epochs counted from it
                    prop_assert!(d.stop_epoch >= 50 + patience - 1);
                }
                _ => {}
            }
        }
    }
}
