//! Early-stopping sentinel for GAN training.
//!
//! The crate watches two signals. Generator and discriminator losses are
//! scanned for mode collapse, non-convergence and instability
//! ([`loss_patterns`]). Periodic snapshots are scored for diversity and
//! fidelity with MS-SSIM and FID ([`metrics`]) against thresholds derived
//! from the training data ([`calibration`]). The [`sentinel`] turns both into
//! a stop decision, and [`simulator`] produces synthetic runs with known
//! outcomes.

pub mod calibration;
pub mod config;
pub mod error;
pub mod loss_patterns;
pub mod metrics;
pub mod sentinel;
pub mod simulator;
pub mod telemetry;

pub use calibration::{calibrate_thresholds, effective_bests, ThresholdMode, Thresholds};
pub use error::{Error, Result};
pub use loss_patterns::{
    analyze_loss_patterns, classify_window, DetectorConfig, PathologyEvent, PathologyKind,
};
pub use metrics::{
    compute_snapshot, fid, mean_ms_ssim, ms_ssim, ssim, FeatureExtractor, MetricsConfig,
    MetricsSnapshot, SsimParams,
};
pub use sentinel::{SentinelConfig, SentinelState, StopDecision, StopReason};
pub use simulator::{Scenario, Script};
pub use telemetry::{GrayImage, ImageSet, LossKind, LossRecord, LossSeries};
