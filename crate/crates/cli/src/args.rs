use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gan-sentinel", version, about = "Early-stopping sentinel for GAN training runs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Seed for every sampled quantity.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute MS-SSIM and FID baselines from training and test images.
    Calibrate(CalibrateArgs),
    /// Drive the sentinel over a loss log and snapshot directories.
    Monitor(MonitorArgs),
    /// Label every epoch of a loss log and merge the labels into segments.
    AnalyzeLoss(AnalyzeArgs),
    /// Mean MS-SSIM over seeded random pairs of one image directory.
    MsSsim(MsSsimArgs),
    /// FID between seeded samples of two image directories.
    Fid(FidArgs),
    /// Generate a labelled synthetic run.
    Simulate(SimulateArgs),
    /// Re-render a monitor report as text or plot-data CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplingArgs {
    /// Image pairs per MS-SSIM score.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Images per FID sample.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Draws averaged per score.
    #[arg(long)]
    pub resamples: Option<usize>,
    /// pixel-downsample, random-projection or external-file.
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed of the random projection.
    #[arg(long)]
    pub feature_seed: Option<u64>,
    /// Feature CSV name inside each image directory (external-file).
    #[arg(long)]
    pub feature_file: Option<String>,
    /// Fixed MS-SSIM scale count instead of the size-derived one.
    #[arg(long)]
    pub num_scales: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectorArgs {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub const_rel_eps: Option<f64>,
    #[arg(long)]
    pub const_abs_eps: Option<f64>,
    #[arg(long)]
    pub jump_threshold: Option<f64>,
    #[arg(long)]
    pub slope_threshold: Option<f64>,
    #[arg(long)]
    pub osc_min_crossings: Option<f64>,
    #[arg(long)]
    pub osc_min_amp: Option<f64>,
    #[arg(long)]
    pub d_zero_eps: Option<f64>,
    #[arg(long)]
    pub healthy_ratio_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MonitorArgs {
    /// Loss log path, or `-` for standard input.
    #[arg(long)]
    pub loss_log: Option<String>,
    /// jsonl or csv; guessed from the extension by default.
    #[arg(long)]
    pub loss_format: Option<String>,
    /// Directory holding `epoch_N/` snapshot directories.
    #[arg(long)]
    pub snapshots_dir: Option<PathBuf>,
    /// Thresholds JSON written by `calibrate`.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Training images, needed to score image snapshots.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Test images, needed to calibrate in place or to resample thresholds.
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    #[arg(long)]
    pub patience: Option<u64>,
    #[arg(long)]
    pub loss_patience: Option<u64>,
    #[arg(long)]
    pub metric_patience: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<u64>,
    /// Apply evaluations only while both losses are flat.
    #[arg(long)]
    pub gate_on_constancy: bool,
    /// min or max of the two thresholds as the initial best.
    #[arg(long)]
    pub threshold_mode: Option<String>,
    /// Recompute thresholds at every evaluation.
    #[arg(long)]
    pub resample_thresholds: bool,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub loss_format: Option<String>,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MsSsimArgs {
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FidArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub collapse_fraction: Option<f64>,
    #[arg(long)]
    pub collapse_level: Option<f64>,
    #[arg(long)]
    pub runaway_level: Option<f64>,
    #[arg(long)]
    pub runaway_volatility: Option<f64>,
    #[arg(long)]
    pub d_start: Option<f64>,
    #[arg(long)]
    pub d_floor: Option<f64>,
    #[arg(long)]
    pub d_decay: Option<f64>,
    #[arg(long)]
    pub transient_fraction: Option<f64>,
    #[arg(long)]
    pub transient_start: Option<f64>,
    #[arg(long)]
    pub transient_peak: Option<f64>,
    #[arg(long)]
    pub band_low: Option<f64>,
    #[arg(long)]
    pub band_high: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub phase_lag: Option<f64>,
    #[arg(long)]
    pub flat_g: Option<f64>,
    #[arg(long)]
    pub flat_d: Option<f64>,
    #[arg(long)]
    pub healthy_g: Option<f64>,
    #[arg(long)]
    pub healthy_d: Option<f64>,
    #[arg(long)]
    pub healthy_offset: Option<f64>,
    #[arg(long)]
    pub healthy_tau: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// mode-collapse, non-convergence, instability, healthy or scripted.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Output directory (falls back to --output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Script JSON file, or a preset: dcgan, msggan, monotone.
    #[arg(long)]
    pub script: Option<String>,
    /// Also emit train/test images and image snapshots.
    #[arg(long)]
    pub images: bool,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub train_images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
    #[arg(long)]
    pub snapshot_images: Option<usize>,
    #[arg(long)]
    pub train_modes: Option<usize>,
    #[arg(long)]
    pub image_noise: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Report JSON written by `monitor`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
