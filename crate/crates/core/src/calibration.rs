//! Baseline MS-SSIM and FID thresholds computed from real images.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_ms_ssim, sample_block, MetricsConfig, SnapshotScorer};
use crate::telemetry::ImageSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Mean MS-SSIM of training pairs.
    pub msssim_th1: f64,
    /// Mean MS-SSIM of test pairs.
    pub msssim_th2: f64,
    /// FID between two training samples.
    pub fid_th1: f64,
    /// FID between training and test samples.
    pub fid_th2: f64,
    pub seed: u64,
    pub sampling: MetricsConfig,
    /// `false` when a set was too small for disjoint samples.
    #[serde(default = "yes")]
    pub disjoint_samples: bool,
}

fn yes() -> bool {
    true
}

impl Thresholds {
    /// Thresholds given directly, e.g. from a scripted run.
    pub fn from_values(msssim_th1: f64, msssim_th2: f64, fid_th1: f64, fid_th2: f64) -> Self {
        Self {
            msssim_th1,
            msssim_th2,
            fid_th1,
            fid_th2,
            seed: 0,
            sampling: MetricsConfig::default(),
            disjoint_samples: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("msssim_th1", self.msssim_th1), ("msssim_th2", self.msssim_th2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("fid_th1", self.fid_th1), ("fid_th2", self.fid_th2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the two thresholds of each metric become one starting best.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Synthetic scores must beat both thresholds.
    #[default]
    Min,
    /// Beating either threshold suffices.
    Max,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::Min => "min",
            ThresholdMode::Max => "max",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(ThresholdMode::Min),
            "max" => Ok(ThresholdMode::Max),
            _ => Err(Error::Config(format!("threshold mode must be min or max, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bests {
    pub best_msssim: f64,
    pub best_fid: f64,
}

pub fn effective_bests(th: &Thresholds) -> Bests {
    effective_bests_with(th, ThresholdMode::Min)
}

pub fn effective_bests_with(th: &Thresholds, mode: ThresholdMode) -> Bests {
    let pick = |a: f64, b: f64| match mode {
        ThresholdMode::Min => a.min(b),
        ThresholdMode::Max => a.max(b),
    };
    Bests {
        best_msssim: pick(th.msssim_th1, th.msssim_th2),
        best_fid: pick(th.fid_th1, th.fid_th2),
    }
}

/// Computes the four thresholds. Train-train FID compares two disjoint
/// training samples when the set is large enough; otherwise the samples
/// overlap and `disjoint_samples` is cleared.
pub fn calibrate_thresholds(
    train: &ImageSet,
    test: &ImageSet,
    seed: u64,
    cfg: &MetricsConfig,
) -> Result<Thresholds> {
    if train.len() < 2 || test.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least 2 train and 2 test images, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    let scorer = SnapshotScorer::new(train, cfg)?;
    calibrate_with(&scorer, train, test, seed)
}

/// Calibration reusing an existing scorer's training features.
pub fn calibrate_with(
    scorer: &SnapshotScorer,
    train: &ImageSet,
    test: &ImageSet,
    seed: u64,
) -> Result<Thresholds> {
    let cfg = scorer.config();
    let test_features = scorer.embed(test)?;
    let (mut ms1, mut ms2, mut f1, mut f2) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..cfg.resamples as u64 {
        let s = seed.wrapping_add(r);
        ms1 += mean_ms_ssim(train, cfg.n_pairs, s, &cfg.ssim)?;
        ms2 += mean_ms_ssim(test, cfg.n_pairs, s, &cfg.ssim)?;
        f1 += scorer.fid_against(scorer.train_features(), s)?;
        f2 += scorer.fid_against(&test_features, s)?;
    }
    let k = cfg.resamples as f64;
    let disjoint = sample_block(train.len(), cfg.n_samples, seed, 1).disjoint;
    Ok(Thresholds {
        msssim_th1: ms1 / k,
        msssim_th2: ms2 / k,
        fid_th1: f1 / k,
        fid_th2: f2 / k,
        seed,
        sampling: cfg.clone(),
        disjoint_samples: disjoint,
    })
}
