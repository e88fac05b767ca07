use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{GrayImage, ImageSet};

pub const DEFAULT_FEATURE_FILE: &str = "features.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    PixelDownsample,
    RandomProjection,
    ExternalFile,
}

impl ExtractorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorKind::PixelDownsample => "pixel-downsample",
            ExtractorKind::RandomProjection => "random-projection",
            ExtractorKind::ExternalFile => "external-file",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel-downsample" => Ok(ExtractorKind::PixelDownsample),
            "random-projection" => Ok(ExtractorKind::RandomProjection),
            "external-file" => Ok(ExtractorKind::ExternalFile),
            _ => Err(Error::Config(format!("unknown feature extractor `{s}`"))),
        }
    }
}

/// How images are mapped to feature vectors for FID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub dim: usize,
    /// Projection seed (random-projection only).
    pub seed: u64,
    /// CSV file looked up inside each image set's directory (external-file only).
    pub file_name: String,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::RandomProjection,
            dim: 64,
            seed: 0,
            file_name: DEFAULT_FEATURE_FILE.into(),
        }
    }
}

impl FeatureExtractor {
    /// Builds the embedding for images of the given size.
    pub fn prepare(&self, width: usize, height: usize) -> Result<Embedder> {
        if self.dim == 0 {
            return Err(Error::Config("feature dim must be >= 1".into()));
        }
        match self.kind {
            ExtractorKind::PixelDownsample => {
                let side = (self.dim as f64).sqrt().round() as usize;
                if side * side != self.dim {
                    return Err(Error::Config(format!(
                        "pixel-downsample needs a square dim, got {}",
                        self.dim
                    )));
                }
                if side > width.min(height) {
                    return Err(Error::Config(format!(
                        "pixel-downsample to {side}x{side} exceeds {width}x{height} images"
                    )));
                }
                Ok(Embedder::Pixel { side })
            }
            ExtractorKind::RandomProjection => {
                let pixels = width * height;
                if self.dim > pixels {
                    return Err(Error::Config(format!(
                        "projection dim {} exceeds {pixels} pixels",
                        self.dim
                    )));
                }
                Ok(Embedder::Projection {
                    matrix: projection_matrix(self.dim, pixels, self.seed),
                })
            }
            ExtractorKind::ExternalFile => Ok(Embedder::External {
                file_name: self.file_name.clone(),
                dim: self.dim,
            }),
        }
    }
}

/// A prepared extractor, reusable across sets of one image size.
#[derive(Debug, Clone)]
pub enum Embedder {
    Pixel { side: usize },
    /// `dim × pixels`, orthonormal rows.
    Projection { matrix: DMatrix<f64> },
    External { file_name: String, dim: usize },
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Pixel { side } => side * side,
            Embedder::Projection { matrix } => matrix.nrows(),
            Embedder::External { dim, .. } => *dim,
        }
    }

    /// `n_images × dim` feature matrix, rows in set order.
    pub fn embed(&self, set: &ImageSet) -> Result<DMatrix<f64>> {
        match self {
            Embedder::Pixel { side } => {
                let rows: Vec<Vec<f64>> = set.images().par_iter().map(|img| pool(img, *side)).collect();
                Ok(rows_to_matrix(&rows, side * side))
            }
            Embedder::Projection { matrix } => {
                let pixels = set.width() * set.height();
                if matrix.ncols() != pixels {
                    return Err(Error::DimensionMismatch(format!(
                        "projection built for {} pixels, images have {pixels}",
                        matrix.ncols()
                    )));
                }
                let x = DMatrix::from_fn(set.len(), pixels, |r, c| set.get(r).pixels()[c]);
                Ok(x * matrix.transpose())
            }
            Embedder::External { file_name, dim } => {
                let dir = set.source_dir().ok_or_else(|| {
                    Error::InvalidInput("external-file features need an image set loaded from a directory".into())
                })?;
                let rows = read_feature_csv(&dir.join(file_name))?;
                if rows.len() != set.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} has {} feature rows for {} images",
                        dir.join(file_name).display(),
                        rows.len(),
                        set.len()
                    )));
                }
                if let Some(bad) = rows.iter().position(|r| r.len() != *dim) {
                    return Err(Error::DimensionMismatch(format!(
                        "feature row {} has {} columns, expected {dim}",
                        bad + 1,
                        rows[bad].len()
                    )));
                }
                Ok(rows_to_matrix(&rows, *dim))
            }
        }
    }
}

/// One-shot embedding of a whole set.
pub fn embed(set: &ImageSet, fx: &FeatureExtractor) -> Result<DMatrix<f64>> {
    fx.prepare(set.width(), set.height())?.embed(set)
}

fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c])
}

/// Mean pooling onto a `side × side` grid of (near-)equal blocks.
fn pool(img: &GrayImage, side: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(side * side);
    for by in 0..side {
        let (y0, y1) = (by * h / side, (by + 1) * h / side);
        for bx in 0..side {
            let (x0, x1) = (bx * w / side, (bx + 1) * w / side);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += img.pixels()[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Seeded Gaussian matrix with rows orthonormalized (modified Gram-Schmidt,
/// two passes).
pub fn projection_matrix(dim: usize, pixels: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(super::STREAM_PROJECTION);
    let mut rows: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..pixels).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    for i in 0..dim {
        for _ in 0..2 {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        rows[i].iter_mut().for_each(|v| *v /= norm);
    }
    DMatrix::from_fn(dim, pixels, |r, c| rows[r][c])
}

/// Numeric CSV, one row per image. A non-numeric first row is taken as a header.
pub fn read_feature_csv(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path.to_path_buf(), e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path.to_path_buf(), e))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) if row.iter().all(|v| v.is_finite()) => rows.push(row),
            Ok(_) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("non-finite feature in {}", path.display()),
                })
            }
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                })
            }
        }
    }
    Ok(rows)
}

fn csv_err(path: PathBuf, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}
