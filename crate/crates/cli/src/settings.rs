//! Flag, config-file and default merging.
//!
//! Every flag has a config key of the same name with `-` replaced by `_`.
//! Values are kept as text until a command asks for them, so one config
//! file can serve every subcommand.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gan_sentinel_core::config::read_kv;
use gan_sentinel_core::metrics::{ExtractorKind, MetricsConfig};
use gan_sentinel_core::simulator::{ImageRunConfig, ShapeParams};
use gan_sentinel_core::{DetectorConfig, SentinelConfig};

use crate::args::{DetectorArgs, SamplingArgs, ShapeArgs};

pub const DETECTOR_KEYS: &[&str] = &[
    "window",
    "const_rel_eps",
    "const_abs_eps",
    "jump_threshold",
    "slope_threshold",
    "osc_min_crossings",
    "osc_min_amp",
    "d_zero_eps",
    "healthy_ratio_tol",
];

pub const SENTINEL_KEYS: &[&str] = &[
    "max_epochs",
    "patience",
    "loss_patience",
    "metric_patience",
    "eval_interval",
    "gate_on_constancy",
    "threshold_mode",
];

pub const SAMPLING_KEYS: &[&str] = &[
    "pairs",
    "samples",
    "resamples",
    "extractor",
    "dim",
    "feature_seed",
    "feature_file",
    "num_scales",
];

pub const SHAPE_KEYS: &[&str] = &[
    "collapse_fraction",
    "collapse_level",
    "runaway_level",
    "runaway_volatility",
    "d_start",
    "d_floor",
    "d_decay",
    "transient_fraction",
    "transient_start",
    "transient_peak",
    "band_low",
    "band_high",
    "period",
    "phase_lag",
    "flat_g",
    "flat_d",
    "healthy_g",
    "healthy_d",
    "healthy_offset",
    "healthy_tau",
];

pub const OTHER_KEYS: &[&str] = &[
    "seed",
    "output",
    "format",
    "loss_log",
    "loss_format",
    "snapshots_dir",
    "thresholds",
    "train_dir",
    "test_dir",
    "resample_thresholds",
    "dir",
    "a",
    "b",
    "scenario",
    "epochs",
    "out",
    "noise_sigma",
    "script",
    "images",
    "image_side",
    "train_images",
    "test_images",
    "snapshot_images",
    "train_modes",
    "image_noise",
    "report",
];

fn is_known(key: &str) -> bool {
    [DETECTOR_KEYS, SENTINEL_KEYS, SAMPLING_KEYS, SHAPE_KEYS, OTHER_KEYS]
        .iter()
        .any(|keys| keys.contains(&key))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Settings {
    /// Starts from a config file, if any. Unknown keys are rejected.
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let Some(path) = config else {
            return Ok(Self::default());
        };
        let values = read_kv(path)?;
        let mut s = Self::from_map(values).with_context(|| format!("in {}", path.display()))?;
        s.source = Some(path.to_path_buf());
        Ok(s)
    }

    /// The config file the settings were loaded from.
    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn from_map(values: BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = values.keys().find(|k| !is_known(k)) {
            bail!("unknown config key `{bad}`");
        }
        Ok(Self { values, source: None })
    }

    /// Overrides `key` when the flag was given.
    pub fn set<T: Display>(&mut self, key: &str, flag: Option<T>) {
        debug_assert!(is_known(key), "{key}");
        if let Some(v) = flag {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    /// Boolean switches can only turn a setting on from the command line.
    pub fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.set(key, Some(true));
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("{key}: invalid value `{v}`: {e}")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| anyhow!("missing --{}", key.replace('_', "-")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.get_or(key, false)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn overlay_detector(&mut self, a: &DetectorArgs) {
        self.set("window", a.window);
        self.set("const_rel_eps", a.const_rel_eps);
        self.set("const_abs_eps", a.const_abs_eps);
        self.set("jump_threshold", a.jump_threshold);
        self.set("slope_threshold", a.slope_threshold);
        self.set("osc_min_crossings", a.osc_min_crossings);
        self.set("osc_min_amp", a.osc_min_amp);
        self.set("d_zero_eps", a.d_zero_eps);
        self.set("healthy_ratio_tol", a.healthy_ratio_tol);
    }

    pub fn overlay_sampling(&mut self, a: &SamplingArgs) {
        self.set("pairs", a.pairs);
        self.set("samples", a.samples);
        self.set("resamples", a.resamples);
        self.set("extractor", a.extractor.as_ref());
        self.set("dim", a.dim);
        self.set("feature_seed", a.feature_seed);
        self.set("feature_file", a.feature_file.as_ref());
        self.set("num_scales", a.num_scales);
    }

    pub fn overlay_shape(&mut self, a: &ShapeArgs) {
        let pairs = [
            ("collapse_fraction", a.collapse_fraction),
            ("collapse_level", a.collapse_level),
            ("runaway_level", a.runaway_level),
            ("runaway_volatility", a.runaway_volatility),
            ("d_start", a.d_start),
            ("d_floor", a.d_floor),
            ("d_decay", a.d_decay),
            ("transient_fraction", a.transient_fraction),
            ("transient_start", a.transient_start),
            ("transient_peak", a.transient_peak),
            ("band_low", a.band_low),
            ("band_high", a.band_high),
            ("period", a.period),
            ("phase_lag", a.phase_lag),
            ("flat_g", a.flat_g),
            ("flat_d", a.flat_d),
            ("healthy_g", a.healthy_g),
            ("healthy_d", a.healthy_d),
            ("healthy_offset", a.healthy_offset),
            ("healthy_tau", a.healthy_tau),
        ];
        for (k, v) in pairs {
            self.set(k, v);
        }
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let mut cfg = DetectorConfig::default();
        for key in DETECTOR_KEYS {
            if let Some(v) = self.raw(key) {
                cfg.apply(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sentinel settings; `metrics_enabled` is left for the caller.
    pub fn sentinel(&self) -> Result<SentinelConfig> {
        let mut cfg = SentinelConfig { detector: self.detector()?, ..Default::default() };
        for key in SENTINEL_KEYS {
            if let Some(v) = self.raw(key) {
                cfg.apply(key, v)?;
            }
        }
        Ok(cfg)
    }

    /// Sampling settings layered over `base`.
    pub fn metrics_over(&self, base: MetricsConfig) -> Result<MetricsConfig> {
        let mut cfg = base;
        if let Some(v) = self.get("pairs")? {
            cfg.n_pairs = v;
        }
        if let Some(v) = self.get("samples")? {
            cfg.n_samples = v;
        }
        if let Some(v) = self.get("resamples")? {
            cfg.resamples = v;
        }
        if let Some(v) = self.get::<ExtractorKind>("extractor")? {
            cfg.extractor.kind = v;
        }
        if let Some(v) = self.get("dim")? {
            cfg.extractor.dim = v;
        }
        if let Some(v) = self.get("feature_seed")? {
            cfg.extractor.seed = v;
        }
        if let Some(v) = self.get::<String>("feature_file")? {
            cfg.extractor.file_name = v;
        }
        if let Some(v) = self.get("num_scales")? {
            cfg.ssim.num_scales = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metrics(&self) -> Result<MetricsConfig> {
        self.metrics_over(MetricsConfig::default())
    }

    pub fn shape(&self) -> Result<ShapeParams> {
        let mut value = serde_json::to_value(ShapeParams::default())?;
        let obj = value.as_object_mut().expect("shape params serialize to an object");
        for key in SHAPE_KEYS {
            if let Some(v) = self.get::<f64>(key)? {
                obj.insert(key.to_string(), v.into());
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn image_run(&self) -> Result<ImageRunConfig> {
        let d = ImageRunConfig::default();
        Ok(ImageRunConfig {
            side: self.get_or("image_side", d.side)?,
            train_images: self.get_or("train_images", d.train_images)?,
            test_images: self.get_or("test_images", d.test_images)?,
            snapshot_images: self.get_or("snapshot_images", d.snapshot_images)?,
            eval_interval: self.get_or("eval_interval", d.eval_interval)?,
            train_modes: self.get_or("train_modes", d.train_modes)?,
            noise: self.get_or("image_noise", d.noise)?,
        })
    }
}
