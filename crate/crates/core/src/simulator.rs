//! Synthetic training runs with known ground truth.
//!
//! Loss curves follow the regime shapes the detectors look for; images are
//! blob mixtures whose mode count controls diversity.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_thresholds, Thresholds};
use crate::error::{Error, Result};
use crate::loss_patterns::PathologyKind;
use crate::metrics::{MetricsConfig, MetricsSnapshot};
use crate::telemetry::{snapshot_dir, write_jsonl, write_pgm, GrayImage, ImageSet, LossKind, LossRecord, LossSeries};

pub const MIN_EPOCHS: u64 = 100;
pub const METRICS_FILE: &str = "metrics.json";
pub const LABELS_FILE: &str = "labels.json";
pub const LOSS_FILE: &str = "loss.jsonl";
pub const THRESHOLDS_FILE: &str = "thresholds.json";

const STREAM_LOSS: u64 = 10;
const STREAM_IMAGES: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    ModeCollapse,
    NonConvergence,
    Instability,
    Healthy,
    Scripted,
}

impl ScenarioKind {
    pub const CANONICAL: [ScenarioKind; 4] = [
        ScenarioKind::ModeCollapse,
        ScenarioKind::NonConvergence,
        ScenarioKind::Instability,
        ScenarioKind::Healthy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::ModeCollapse => "mode-collapse",
            ScenarioKind::NonConvergence => "non-convergence",
            ScenarioKind::Instability => "instability",
            ScenarioKind::Healthy => "healthy",
            ScenarioKind::Scripted => "scripted",
        }
    }

    /// Label expected on the steady-state window.
    pub fn steady_label(self) -> PathologyKind {
        match self {
            ScenarioKind::ModeCollapse => PathologyKind::ModeCollapse,
            ScenarioKind::NonConvergence => PathologyKind::NonConvergence,
            ScenarioKind::Instability => PathologyKind::Instability,
            ScenarioKind::Healthy | ScenarioKind::Scripted => PathologyKind::Stable,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        [
            ScenarioKind::ModeCollapse,
            ScenarioKind::NonConvergence,
            ScenarioKind::Instability,
            ScenarioKind::Healthy,
            ScenarioKind::Scripted,
        ]
        .into_iter()
        .find(|k| k.as_str() == norm || k.as_str().replace('-', "") == norm)
        .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Curve parameters. Defaults reproduce the regime levels of each kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeParams {
    /// Fraction of the run before mode collapse turns into runaway growth.
    pub collapse_fraction: f64,
    pub collapse_level: f64,
    pub runaway_level: f64,
    /// Relative volatility of G during runaway growth.
    pub runaway_volatility: f64,
    pub d_start: f64,
    pub d_floor: f64,
    /// Time constant of the discriminator collapse, in epochs.
    pub d_decay: f64,
    /// Fraction of the run spent in the initial transient.
    pub transient_fraction: f64,
    pub transient_start: f64,
    pub transient_peak: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub period: f64,
    /// Phase lag of D behind G, radians.
    pub phase_lag: f64,
    pub flat_g: f64,
    pub flat_d: f64,
    pub healthy_g: f64,
    pub healthy_d: f64,
    /// Initial distance of the healthy curves from their levels.
    pub healthy_offset: f64,
    pub healthy_tau: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            collapse_fraction: 0.45,
            collapse_level: 5.0,
            runaway_level: 70.0,
            runaway_volatility: 0.05,
            d_start: 0.7,
            d_floor: 0.015,
            d_decay: 2.0,
            transient_fraction: 0.25,
            transient_start: 0.7,
            transient_peak: 4.0,
            band_low: 0.6,
            band_high: 0.75,
            period: 8.0,
            phase_lag: 2.0,
            flat_g: 0.7875,
            flat_d: 0.6125,
            healthy_g: 1.0,
            healthy_d: 0.5,
            healthy_offset: 0.05,
            healthy_tau: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub epochs: u64,
    pub seed: u64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub shape: ShapeParams,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, epochs: u64, seed: u64) -> Self {
        Self {
            kind,
            epochs,
            seed,
            noise_sigma: 0.01,
            shape: ShapeParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < MIN_EPOCHS {
            return Err(Error::Config(format!(
                "scenario needs at least {MIN_EPOCHS} epochs, got {}",
                self.epochs
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        let s = &self.shape;
        if !(s.band_low < s.band_high) {
            return Err(Error::Config("band_low must be below band_high".into()));
        }
        for (name, f) in [("collapse_fraction", s.collapse_fraction), ("transient_fraction", s.transient_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(s.period > 0.0 && s.d_decay > 0.0 && s.healthy_tau > 0.0) {
            return Err(Error::Config("period, d_decay and healthy_tau must be > 0".into()));
        }
        Ok(())
    }

    fn phase_end(&self, fraction: f64) -> u64 {
        (fraction * self.epochs as f64).round() as u64
    }

    /// End epoch of the window whose label is the scenario's ground truth.
    pub fn steady_state_end(&self) -> u64 {
        match self.kind {
            ScenarioKind::ModeCollapse => self.phase_end(self.shape.collapse_fraction),
            _ => self.epochs,
        }
    }

    /// Ground-truth regimes as contiguous epoch ranges covering `1..=epochs`.
    pub fn labels(&self) -> Vec<LabelWindow> {
        let n = self.epochs;
        let split = |at: u64, a, b| {
            vec![
                LabelWindow { epoch_start: 1, epoch_end: at, label: a },
                LabelWindow { epoch_start: at + 1, epoch_end: n, label: b },
            ]
        };
        match self.kind {
            ScenarioKind::ModeCollapse => split(
                self.phase_end(self.shape.collapse_fraction),
                PathologyKind::ModeCollapse,
                PathologyKind::Instability,
            ),
            ScenarioKind::NonConvergence => split(
                self.phase_end(self.shape.transient_fraction),
                PathologyKind::ModeCollapse,
                PathologyKind::NonConvergence,
            ),
            kind => vec![LabelWindow { epoch_start: 1, epoch_end: n, label: kind.steady_label() }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelWindow {
    pub epoch_start: u64,
    pub epoch_end: u64,
    pub label: PathologyKind,
}

/// Loss trajectories for epochs `1..=sc.epochs`.
pub fn simulate_losses(sc: &Scenario) -> Result<LossSeries> {
    sc.validate()?;
    let s = &sc.shape;
    let n = sc.epochs as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(STREAM_LOSS);
    let noise = Normal::new(0.0, sc.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let collapsed_d = |t: f64| s.d_floor + (s.d_start - s.d_floor) * (-t / s.d_decay).exp();
    let band_mid = (s.band_low + s.band_high) / 2.0;
    let band_amp = (s.band_high - s.band_low) / 2.0;

    let mut records = Vec::with_capacity(sc.epochs as usize);
    for epoch in 1..=sc.epochs {
        let t = epoch as f64;
        let (eg, ed): (f64, f64) = (noise.sample(&mut rng), noise.sample(&mut rng));
        let (g, d) = match sc.kind {
            ScenarioKind::ModeCollapse => {
                let tc = s.collapse_fraction * n;
                let g = if t <= tc {
                    s.collapse_level * t / tc
                } else {
                    let base = s.collapse_level + (s.runaway_level - s.collapse_level) * (t - tc) / (n - tc);
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    base * (1.0 + s.runaway_volatility * z)
                };
                (g, collapsed_d(t))
            }
            ScenarioKind::NonConvergence => {
                let tt = s.transient_fraction * n;
                if t <= tt {
                    (s.transient_start + (s.transient_peak - s.transient_start) * t / tt, collapsed_d(t))
                } else {
                    let w = std::f64::consts::TAU * t / s.period + phase;
                    (band_mid + band_amp * w.sin(), band_mid + band_amp * (w + s.phase_lag).sin())
                }
            }
            ScenarioKind::Instability => (s.flat_g, s.flat_d),
            ScenarioKind::Healthy | ScenarioKind::Scripted => {
                let decay = s.healthy_offset * (-t / s.healthy_tau).exp();
                (s.healthy_g - decay, s.healthy_d + decay)
            }
        };
        records.push(LossRecord::new(epoch, (g + eg).max(0.0), (d + ed).max(0.0)));
    }
    LossSeries::new(records, LossKind::BinaryCrossEntropy)
}

/// Blob-mixture image distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDistribution {
    pub side: usize,
    /// Blob centers `(x, y)` in pixels, one per mode.
    pub centers: Vec<(f64, f64)>,
    /// Blob radii (Gaussian sigma) in pixels, one per mode.
    pub radii: Vec<f64>,
    /// Standard deviation of the per-image center jitter, pixels.
    pub jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub background: f64,
    pub intensity: f64,
}

impl ImageDistribution {
    /// `n_modes` equal blobs (sigma `side / 10`) on a regular grid; `offset`
    /// shifts the grid by that fraction of a cell (0.5 gives centers
    /// disjoint from offset 0).
    pub fn grid(n_modes: usize, side: usize, offset: f64) -> Self {
        let k = (n_modes as f64).sqrt().ceil().max(1.0) as usize;
        let cell = side as f64 / k as f64;
        let centers = (0..n_modes)
            .map(|m| {
                let (cx, cy) = ((m % k) as f64, (m / k) as f64);
                let wrap = |v: f64| (v + 0.5 + offset).rem_euclid(k as f64) * cell;
                (wrap(cx), wrap(cy))
            })
            .collect();
        Self {
            side,
            centers,
            radii: vec![side as f64 / 10.0; n_modes],
            jitter: 1.0,
            noise: 0.0,
            background: 0.1,
            intensity: 0.8,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::Config("distribution needs at least one mode".into()));
        }
        if self.centers.len() != self.radii.len() {
            return Err(Error::Config("one radius per mode required".into()));
        }
        if self.side < crate::telemetry::MIN_IMAGE_SIDE {
            return Err(Error::Config(format!("raster side {} is too small", self.side)));
        }
        let side = self.side as f64;
        for (&(x, y), &r) in self.centers.iter().zip(&self.radii) {
            if !(r > 0.0 && (0.0..=side).contains(&x) && (0.0..=side).contains(&y)) {
                return Err(Error::Config(format!("blob at ({x}, {y}) radius {r} does not fit the raster")));
            }
        }
        if self.jitter < 0.0 || self.noise < 0.0 {
            return Err(Error::Config("jitter and noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// `n` 8-bit-exact images, each a single blob from a uniformly chosen mode.
pub fn simulate_images(dist: &ImageDistribution, n: usize, seed: u64) -> Result<ImageSet> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("need at least one image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_IMAGES);
    let jitter = Normal::new(0.0, dist.jitter).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, dist.noise).map_err(|e| Error::Config(e.to_string()))?;
    let side = dist.side;
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.random_range(0..dist.n_modes());
        let (cx, cy) = dist.centers[m];
        let (cx, cy) = (cx + jitter.sample(&mut rng), cy + jitter.sample(&mut rng));
        let two_r2 = 2.0 * dist.radii[m] * dist.radii[m];
        let mut bytes = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let mut v = dist.background + dist.intensity * (-d2 / two_r2).exp();
                if dist.noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        images.push(GrayImage::from_bytes(side, side, &bytes, 255)?);
    }
    ImageSet::new(images)
}

/// Per-evaluation metric values replayed verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub name: String,
    pub max_epochs: u64,
    pub eval_interval: u64,
    pub thresholds: [f64; 4],
    pub evaluations: Vec<ScriptedEval>,
    /// Loss curves accompanying the scripted metrics.
    #[serde(default = "healthy_kind")]
    pub loss_scenario: ScenarioKind,
}

fn healthy_kind() -> ScenarioKind {
    ScenarioKind::Healthy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEval {
    pub epoch: u64,
    pub msssim: f64,
    pub fid: f64,
}

impl Script {
    /// Improves jointly at every evaluation up to `best_epoch`, worse afterwards.
    pub fn peak_at(name: &str, best_epoch: u64, max_epochs: u64) -> Self {
        let eval_interval = 50;
        let evaluations = (1..=max_epochs / eval_interval)
            .map(|k| {
                let epoch = k * eval_interval;
                let steps = epoch.min(best_epoch) as f64 / eval_interval as f64;
                let (mut msssim, mut fid) = (0.44 - 0.005 * steps, 11.5 - 0.25 * steps);
                if epoch > best_epoch {
                    let late = (epoch - best_epoch) as f64 / eval_interval as f64;
                    msssim += 0.01 * late;
                    fid += 0.5 * late;
                }
                ScriptedEval { epoch, msssim, fid }
            })
            .collect();
        Self {
            name: name.into(),
            max_epochs,
            eval_interval,
            thresholds: [0.45, 0.50, 12.0, 15.0],
            evaluations,
            loss_scenario: ScenarioKind::Healthy,
        }
    }

    pub fn dcgan() -> Self {
        Self::peak_at("dcgan", 350, 1000)
    }

    pub fn msggan() -> Self {
        Self::peak_at("msggan", 500, 1000)
    }

    /// Joint improvement at every evaluation.
    pub fn monotone() -> Self {
        Self::peak_at("monotone", 1000, 1000)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dcgan" => Ok(Self::dcgan()),
            "msggan" | "msg-gan" => Ok(Self::msggan()),
            "monotone" => Ok(Self::monotone()),
            _ => Err(Error::Config(format!("unknown script preset `{name}`"))),
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        let [a, b, c, d] = self.thresholds;
        Thresholds::from_values(a, b, c, d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 || self.max_epochs < MIN_EPOCHS {
            return Err(Error::Config("script needs eval_interval >= 1 and max_epochs >= 100".into()));
        }
        let mut last = 0;
        for ev in &self.evaluations {
            if ev.epoch % self.eval_interval != 0 || ev.epoch <= last || ev.epoch > self.max_epochs {
                return Err(Error::Config(format!(
                    "scripted evaluation at epoch {} is misaligned (interval {}, max {})",
                    ev.epoch, self.eval_interval, self.max_epochs
                )));
            }
            if !(ev.msssim.is_finite() && ev.fid.is_finite()) {
                return Err(Error::Config(format!("non-finite scripted scores at epoch {}", ev.epoch)));
            }
            last = ev.epoch;
        }
        self.thresholds().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotContent {
    Metrics(MetricsSnapshot),
    Images(ImageSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSnapshot {
    pub epoch: u64,
    pub content: SnapshotContent,
}

/// A complete simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunBundle {
    pub scenario: Scenario,
    pub losses: LossSeries,
    pub labels: Vec<LabelWindow>,
    pub snapshots: Vec<RunSnapshot>,
    pub thresholds: Option<Thresholds>,
    pub train: Option<ImageSet>,
    pub test: Option<ImageSet>,
}

pub fn scripted_run(script: &Script, seed: u64) -> Result<RunBundle> {
    script.validate()?;
    let mut scenario = Scenario::new(ScenarioKind::Scripted, script.max_epochs, seed);
    if script.loss_scenario != ScenarioKind::Scripted {
        scenario.kind = script.loss_scenario;
    }
    let losses = simulate_losses(&scenario)?;
    let labels = scenario.labels();
    scenario.kind = ScenarioKind::Scripted;
    let snapshots = script
        .evaluations
        .iter()
        .map(|ev| RunSnapshot {
            epoch: ev.epoch,
            content: SnapshotContent::Metrics(MetricsSnapshot {
                epoch: ev.epoch,
                msssim_synth: ev.msssim,
                fid_train_synth: ev.fid,
                sample_seed: seed,
                n_pairs: 0,
                n_samples: 0,
            }),
        })
        .collect();
    Ok(RunBundle {
        scenario,
        losses,
        labels,
        snapshots,
        thresholds: Some(script.thresholds()),
        train: None,
        test: None,
    })
}

/// Image settings for [`image_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageRunConfig {
    pub side: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub snapshot_images: usize,
    pub eval_interval: u64,
    pub train_modes: usize,
    pub noise: f64,
}

impl Default for ImageRunConfig {
    fn default() -> Self {
        Self {
            side: 128,
            train_images: 200,
            test_images: 100,
            snapshot_images: 100,
            eval_interval: 50,
            train_modes: 16,
            noise: 0.02,
        }
    }
}

/// Synthetic mode count at `epoch`: collapsed runs emit one mode, healthy
/// runs grow towards the training diversity.
fn synthetic_modes(sc: &Scenario, cfg: &ImageRunConfig, epoch: u64) -> usize {
    match sc.kind {
        ScenarioKind::ModeCollapse => 1,
        ScenarioKind::NonConvergence | ScenarioKind::Instability => (cfg.train_modes / 4).max(1),
        ScenarioKind::Healthy | ScenarioKind::Scripted => {
            let frac = epoch as f64 / sc.epochs as f64;
            ((cfg.train_modes as f64 * frac).ceil() as usize).clamp(1, cfg.train_modes)
        }
    }
}

/// Loss curves plus image snapshots every `eval_interval` epochs, with
/// thresholds calibrated on the generated train/test sets.
pub fn image_run(sc: &Scenario, cfg: &ImageRunConfig, metrics: &MetricsConfig) -> Result<RunBundle> {
    if cfg.eval_interval == 0 {
        return Err(Error::Config("eval_interval must be >= 1".into()));
    }
    let losses = simulate_losses(sc)?;
    let real = ImageDistribution::grid(cfg.train_modes, cfg.side, 0.0).with_noise(cfg.noise);
    let train = simulate_images(&real, cfg.train_images, sc.seed)?;
    let test = simulate_images(&real, cfg.test_images, sc.seed.wrapping_add(1))?;
    let thresholds = calibrate_thresholds(&train, &test, sc.seed, metrics)?;
    let mut snapshots = Vec::new();
    let mut epoch = cfg.eval_interval;
    while epoch <= sc.epochs {
        let modes = synthetic_modes(sc, cfg, epoch);
        let dist = ImageDistribution::grid(modes, cfg.side, 0.0).with_noise(cfg.noise);
        let set = simulate_images(&dist, cfg.snapshot_images, sc.seed.wrapping_mul(1_000_003).wrapping_add(epoch))?;
        snapshots.push(RunSnapshot { epoch, content: SnapshotContent::Images(set) });
        epoch += cfg.eval_interval;
    }
    Ok(RunBundle {
        scenario: sc.clone(),
        losses,
        labels: sc.labels(),
        snapshots,
        thresholds: Some(thresholds),
        train: Some(train),
        test: Some(test),
    })
}

/// Loss curves only.
pub fn loss_run(sc: &Scenario) -> Result<RunBundle> {
    Ok(RunBundle {
        scenario: sc.clone(),
        losses: simulate_losses(sc)?,
        labels: sc.labels(),
        snapshots: Vec::new(),
        thresholds: None,
        train: None,
        test: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub scenario: Scenario,
    pub windows: Vec<LabelWindow>,
}

fn write_images(dir: &Path, set: &ImageSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in set.images().iter().enumerate() {
        write_pgm(&dir.join(format!("img_{i:04}.pgm")), img)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `loss.jsonl`, `labels.json`, optional `thresholds.json`,
/// `train/`, `test/` and `snapshots/epoch_N/` under `out`.
pub fn emit_run(bundle: &RunBundle, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let loss_path = out.join(LOSS_FILE);
    let file = fs::File::create(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
    write_jsonl(&bundle.losses, std::io::BufWriter::new(file))?;
    write_json(
        &out.join(LABELS_FILE),
        &LabelsFile { scenario: bundle.scenario.clone(), windows: bundle.labels.clone() },
    )?;
    if let Some(th) = &bundle.thresholds {
        write_json(&out.join(THRESHOLDS_FILE), th)?;
    }
    if let Some(train) = &bundle.train {
        write_images(&out.join("train"), train)?;
    }
    if let Some(test) = &bundle.test {
        write_images(&out.join("test"), test)?;
    }
    let snaps = out.join("snapshots");
    for snap in &bundle.snapshots {
        let dir = snapshot_dir(&snaps, snap.epoch);
        match &snap.content {
            SnapshotContent::Metrics(m) => {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_json(&dir.join(METRICS_FILE), m)?;
            }
            SnapshotContent::Images(set) => write_images(&dir, set)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_patterns::{classify_window, DetectorConfig};
    use crate::metrics::{mean_ms_ssim, SsimParams};
    use crate::telemetry::slice_window;

    fn steady_label(kind: ScenarioKind, seed: u64) -> PathologyKind {
        let sc = Scenario::new(kind, 1000, seed);
        let series = simulate_losses(&sc).unwrap();
        let cfg = DetectorConfig::default();
        let w = slice_window(&series, sc.steady_state_end(), cfg.window as u64).unwrap();
        classify_window(&w.g_losses(), &w.d_losses(), &cfg).unwrap().kind
    }

    #[test]
    fn healthy_levels() {
        let s = simulate_losses(&Scenario::new(ScenarioKind::Healthy, 1000, 0)).unwrap();
        let g = s.g_losses();
        let d = s.d_losses();
        let mg: f64 = g[900..].iter().sum::<f64>() / 100.0;
        let md: f64 = d[900..].iter().sum::<f64>() / 100.0;
        assert!((mg - 1.0).abs() <= 0.01 && (md - 0.5).abs() <= 0.01);
    }

    #[test]
    fn steady_windows_match_ground_truth() {
        for kind in ScenarioKind::CANONICAL {
            for seed in 0..5 {
                assert_eq!(steady_label(kind, seed), kind.steady_label(), "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn losses_are_deterministic() {
        let sc = Scenario::new(ScenarioKind::NonConvergence, 300, 4);
        assert_eq!(simulate_losses(&sc).unwrap(), simulate_losses(&sc).unwrap());
        let other = Scenario { seed: 5, ..sc.clone() };
        assert_ne!(simulate_losses(&sc).unwrap(), simulate_losses(&other).unwrap());
    }

    #[test]
    fn scenario_validation() {
        assert!(simulate_losses(&Scenario::new(ScenarioKind::Healthy, 99, 0)).is_err());
        let mut sc = Scenario::new(ScenarioKind::Healthy, 100, 0);
        sc.shape.band_low = 0.8;
        assert!(sc.validate().is_err());
        sc.shape.band_low = 0.6;
        sc.noise_sigma = -1.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn labels_tile_the_run() {
        for kind in ScenarioKind::CANONICAL {
            let labels = Scenario::new(kind, 1000, 0).labels();
            assert_eq!(labels[0].epoch_start, 1);
            assert_eq!(labels.last().unwrap().epoch_end, 1000);
            for pair in labels.windows(2) {
                assert_eq!(pair[0].epoch_end + 1, pair[1].epoch_start);
            }
        }
    }

    #[test]
    fn single_mode_images_are_near_identical() {
        let set = simulate_images(&ImageDistribution::grid(1, 64, 0.0), 20, 1).unwrap();
        assert!(mean_ms_ssim(&set, 10, 1, &SsimParams::default()).unwrap() > 0.95);
    }

    #[test]
    fn images_are_deterministic_and_quantized() {
        let dist = ImageDistribution::grid(4, 32, 0.0).with_noise(0.05);
        let a = simulate_images(&dist, 3, 9).unwrap();
        assert_eq!(a, simulate_images(&dist, 3, 9).unwrap());
        for img in a.images() {
            assert_eq!(GrayImage::from_bytes(32, 32, &img.to_bytes(), 255).unwrap(), *img);
        }
    }

    #[test]
    fn distribution_validation() {
        let mut d = ImageDistribution::grid(2, 32, 0.0);
        d.radii.pop();
        assert!(d.validate().is_err());
        let mut d = ImageDistribution::grid(2, 32, 0.0);
        d.centers[0] = (40.0, 1.0);
        assert!(d.validate().is_err());
        assert!(simulate_images(&ImageDistribution::grid(2, 32, 0.0), 0, 0).is_err());
    }

    #[test]
    fn grid_offsets_are_disjoint() {
        let a = ImageDistribution::grid(4, 64, 0.0);
        let b = ImageDistribution::grid(4, 64, 0.5);
        for c in &a.centers {
            assert!(!b.centers.contains(c));
        }
    }

    #[test]
    fn script_presets() {
        let s = Script::dcgan();
        s.validate().unwrap();
        let best = s.evaluations.iter().fold((f64::MAX, f64::MAX, 0), |acc, e| {
            if e.msssim <= acc.0 && e.fid <= acc.1 { (e.msssim, e.fid, e.epoch) } else { acc }
        });
        assert_eq!(best.2, 350);
        assert!(Script::preset("nope").is_err());
        let mut bad = Script::msggan();
        bad.evaluations[0].epoch = 55;
        assert!(matches!(scripted_run(&bad, 0), Err(Error::Config(_))));
    }
}
