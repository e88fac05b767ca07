//! Diversity (MS-SSIM) and quality (FID) scores over sampled image sets.
//!
//! Every random choice is drawn from a ChaCha stream keyed by the caller's
//! seed, so scores are pure functions of (images, seed, config). Pair
//! evaluations run in parallel but are reduced in a fixed order.

mod embed;
mod fid;
mod ssim;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embed::{
    embed, projection_matrix, read_feature_csv, Embedder, ExtractorKind, FeatureExtractor,
    DEFAULT_FEATURE_FILE,
};
pub use fid::{fid, fit_gaussian, frechet_distance, sqrtm_psd, Gaussian, COV_EPSILON};
pub use ssim::{gaussian_window, ms_ssim, ssim, SsimParams, SsimScore, DEFAULT_SCALE_WEIGHTS};

use crate::error::{Error, Result};
use crate::telemetry::ImageSet;

const STREAM_PAIRS: u64 = 1;
const STREAM_PERMUTATION: u64 = 2;
const STREAM_FALLBACK: u64 = 3;
pub(crate) const STREAM_PROJECTION: u64 = 4;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Sampling protocol shared by snapshots and calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub n_pairs: usize,
    pub n_samples: usize,
    /// Draws averaged per score (seeds `seed`, `seed + 1`, …).
    pub resamples: usize,
    pub ssim: SsimParams,
    pub extractor: FeatureExtractor,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_pairs: 50,
            n_samples: 100,
            resamples: 1,
            ssim: SsimParams::default(),
            extractor: FeatureExtractor::default(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.n_samples < 2 || self.resamples == 0 {
            return Err(Error::Config(
                "n_pairs and resamples must be >= 1, n_samples >= 2".into(),
            ));
        }
        self.ssim.validate()
    }
}

/// Index pairs `(i, j)` with `i < j`. Pairs are disjoint when the set holds
/// at least `2·n_pairs` images, otherwise drawn independently.
pub fn sample_pairs(n_images: usize, n_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n_images < 2 {
        return Err(Error::InvalidInput(format!(
            "pair sampling needs at least 2 images, got {n_images}"
        )));
    }
    let mut r = rng(seed, STREAM_PAIRS);
    let order = |a: usize, b: usize| (a.min(b), a.max(b));
    if n_images >= 2 * n_pairs {
        let picked = index::sample(&mut r, n_images, 2 * n_pairs).into_vec();
        Ok(picked.chunks(2).map(|c| order(c[0], c[1])).collect())
    } else {
        Ok((0..n_pairs)
            .map(|_| {
                let i = r.random_range(0..n_images);
                let mut j = r.random_range(0..n_images - 1);
                if j >= i {
                    j += 1;
                }
                order(i, j)
            })
            .collect())
    }
}

/// Mean MS-SSIM over seeded random pairs. Lower means more diverse.
pub fn mean_ms_ssim(set: &ImageSet, n_pairs: usize, seed: u64, p: &SsimParams) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be >= 1".into()));
    }
    let pairs = sample_pairs(set.len(), n_pairs, seed)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| ms_ssim(set.get(i), set.get(j), p))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// A seeded subset of image indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub indices: Vec<usize>,
    /// `false` when the set was too small for disjoint blocks.
    pub disjoint: bool,
}

/// Block `block` (0 or 1) of a seeded permutation of `0..n_images`.
/// Blocks 0 and 1 never share an index when `n_images >= 2·n_samples`;
/// smaller sets fall back to an independent re-seeded draw for block 1.
pub fn sample_block(n_images: usize, n_samples: usize, seed: u64, block: usize) -> SampleBlock {
    debug_assert!(block < 2);
    let mut perm: Vec<usize> = (0..n_images).collect();
    perm.shuffle(&mut rng(seed, STREAM_PERMUTATION));
    if n_images >= 2 * n_samples {
        return SampleBlock {
            indices: perm[block * n_samples..(block + 1) * n_samples].to_vec(),
            disjoint: true,
        };
    }
    let take = n_samples.min(n_images);
    let indices = if block == 0 {
        perm[..take].to_vec()
    } else {
        index::sample(&mut rng(seed, STREAM_FALLBACK), n_images, take).into_vec()
    };
    SampleBlock { indices, disjoint: false }
}

/// The given rows of a feature matrix, in order.
pub fn select_rows(features: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), features.ncols(), |r, c| features[(rows[r], c)])
}

/// One evaluation's scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub epoch: u64,
    pub msssim_synth: f64,
    pub fid_train_synth: f64,
    pub sample_seed: u64,
    pub n_pairs: usize,
    pub n_samples: usize,
}

/// Scores synthetic sets against a fixed training set; training features
/// are embedded once.
#[derive(Debug, Clone)]
pub struct SnapshotScorer {
    cfg: MetricsConfig,
    embedder: Embedder,
    train_features: DMatrix<f64>,
    width: usize,
    height: usize,
}

impl SnapshotScorer {
    pub fn new(train: &ImageSet, cfg: &MetricsConfig) -> Result<Self> {
        cfg.validate()?;
        let embedder = cfg.extractor.prepare(train.width(), train.height())?;
        let train_features = embedder.embed(train)?;
        Ok(Self {
            cfg: cfg.clone(),
            embedder,
            train_features,
            width: train.width(),
            height: train.height(),
        })
    }

    pub fn config(&self) -> &MetricsConfig {
        &self.cfg
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn train_features(&self) -> &DMatrix<f64> {
        &self.train_features
    }

    /// FID between training block 0 and block 1 of `features`.
    pub fn fid_against(&self, features: &DMatrix<f64>, seed: u64) -> Result<f64> {
        let ns = self.cfg.n_samples;
        let a = sample_block(self.train_features.nrows(), ns, seed, 0);
        let b = sample_block(features.nrows(), ns, seed, 1);
        fid(
            &select_rows(&self.train_features, &a.indices),
            &select_rows(features, &b.indices),
        )
    }

    pub fn embed(&self, set: &ImageSet) -> Result<DMatrix<f64>> {
        if (set.width(), set.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "images are {}x{}, training images are {}x{}",
                set.width(),
                set.height(),
                self.width,
                self.height
            )));
        }
        self.embedder.embed(set)
    }

    pub fn score(&self, synth: &ImageSet, epoch: u64, seed: u64) -> Result<MetricsSnapshot> {
        let features = self.embed(synth)?;
        let (mut ms, mut fd) = (0.0, 0.0);
        for r in 0..self.cfg.resamples as u64 {
            ms += mean_ms_ssim(synth, self.cfg.n_pairs, seed.wrapping_add(r), &self.cfg.ssim)?;
            fd += self.fid_against(&features, seed.wrapping_add(r))?;
        }
        let k = self.cfg.resamples as f64;
        Ok(MetricsSnapshot {
            epoch,
            msssim_synth: ms / k,
            fid_train_synth: fd / k,
            sample_seed: seed,
            n_pairs: self.cfg.n_pairs,
            n_samples: self.cfg.n_samples,
        })
    }
}

pub fn compute_snapshot(
    train: &ImageSet,
    synth: &ImageSet,
    epoch: u64,
    seed: u64,
    cfg: &MetricsConfig,
) -> Result<MetricsSnapshot> {
    SnapshotScorer::new(train, cfg)?.score(synth, epoch, seed)
}
