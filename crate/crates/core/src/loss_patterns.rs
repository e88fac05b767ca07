//! Windowed detectors over generator/discriminator loss trajectories.
//!
//! Each detector summarizes one series (constancy, sharp trend, oscillation).
//! [`classify_window`] combines the summaries of a G/D window pair into a
//! single [`PathologyKind`] using a fixed precedence:
//!
//! 1. mode collapse: D collapsed below `d_zero_eps` while G is not falling;
//! 2. mode collapse: G rises sharply while D falls sharply;
//! 3. non-convergence: both series oscillate;
//! 4. stable: both constant with G ≈ 2·D;
//! 5. instability: an abrupt jump in either series, or both constant at
//!    any other ratio;
//! 6. otherwise indeterminate.
//!
//! Rules 1 and 2 only apply to smooth windows (no single-step change of
//! `jump_threshold` or more); abrupt jumps are an instability signature.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::LossSeries;

/// Windows shorter than this are never labelled.
pub const MIN_CLASSIFY_LEN: usize = 5;

/// Thresholds for the loss-pattern detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Trailing window length in epochs.
    pub window: usize,
    pub const_rel_eps: f64,
    pub const_abs_eps: f64,
    /// Smallest single-step change counted as abrupt.
    pub jump_threshold: f64,
    /// Least-squares slope (per epoch) counted as a sharp trend.
    pub slope_threshold: f64,
    /// Detrended zero crossings per epoch.
    pub osc_min_crossings: f64,
    pub osc_min_amp: f64,
    /// Mean discriminator loss below which D is considered collapsed.
    pub d_zero_eps: f64,
    /// Relative tolerance on `g ≈ 2·d` for the healthy signature.
    pub healthy_ratio_tol: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 50,
            const_rel_eps: 0.02,
            const_abs_eps: 0.1,
            jump_threshold: 0.5,
            slope_threshold: 0.01,
            osc_min_crossings: 0.2,
            osc_min_amp: 0.1,
            d_zero_eps: 0.05,
            healthy_ratio_tol: 0.2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < MIN_CLASSIFY_LEN {
            return Err(Error::Config(format!(
                "detector window must be >= {MIN_CLASSIFY_LEN}, got {}",
                self.window
            )));
        }
        for (name, v) in self.thresholds() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn thresholds(&self) -> [(&'static str, f64); 8] {
        [
            ("const_rel_eps", self.const_rel_eps),
            ("const_abs_eps", self.const_abs_eps),
            ("jump_threshold", self.jump_threshold),
            ("slope_threshold", self.slope_threshold),
            ("osc_min_crossings", self.osc_min_crossings),
            ("osc_min_amp", self.osc_min_amp),
            ("d_zero_eps", self.d_zero_eps),
            ("healthy_ratio_tol", self.healthy_ratio_tol),
        ]
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))
        };
        match key {
            "window" => {
                self.window = value
                    .parse()
                    .map_err(|_| Error::Config(format!("window: `{value}` is not an integer")))?
            }
            "const_rel_eps" => self.const_rel_eps = parse(value)?,
            "const_abs_eps" => self.const_abs_eps = parse(value)?,
            "jump_threshold" => self.jump_threshold = parse(value)?,
            "slope_threshold" => self.slope_threshold = parse(value)?,
            "osc_min_crossings" => self.osc_min_crossings = parse(value)?,
            "osc_min_amp" => self.osc_min_amp = parse(value)?,
            "d_zero_eps" => self.d_zero_eps = parse(value)?,
            "healthy_ratio_tol" => self.healthy_ratio_tol = parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat `key = value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut out = format!("window = {}\n", self.window);
        for (name, v) in self.thresholds() {
            out.push_str(&format!("{name} = {v}\n"));
        }
        out
    }

    /// Half-width of the centered moving average used for detrending.
    pub fn detrend_half_span(&self) -> usize {
        ((self.window / 5) / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constancy {
    pub constant: bool,
    pub range: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpChange {
    pub direction: Direction,
    /// Least-squares slope per epoch.
    pub slope: f64,
    pub max_jump: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub oscillating: bool,
    pub crossing_rate: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathologyKind {
    ModeCollapse,
    NonConvergence,
    Instability,
    Stable,
    Indeterminate,
}

impl PathologyKind {
    pub fn is_pathology(self) -> bool {
        matches!(
            self,
            PathologyKind::ModeCollapse | PathologyKind::NonConvergence | PathologyKind::Instability
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PathologyKind::ModeCollapse => "ModeCollapse",
            PathologyKind::NonConvergence => "NonConvergence",
            PathologyKind::Instability => "Instability",
            PathologyKind::Stable => "Stable",
            PathologyKind::Indeterminate => "Indeterminate",
        }
    }
}

impl fmt::Display for PathologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PathologyKind::ModeCollapse,
            PathologyKind::NonConvergence,
            PathologyKind::Instability,
            PathologyKind::Stable,
            PathologyKind::Indeterminate,
        ]
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Config(format!("unknown pathology kind `{s}`")))
    }
}

/// Statistics behind a window label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub samples: usize,
    /// Precedence rule that fired (1–6); 0 for windows too short to label.
    pub rule: u8,
    pub g_mean: f64,
    pub d_mean: f64,
    pub g_range: f64,
    pub d_range: f64,
    pub g_slope: f64,
    pub d_slope: f64,
    pub g_max_jump: f64,
    pub d_max_jump: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_crossing_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_crossing_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathologyEvent {
    pub kind: PathologyKind,
    pub epoch_start: u64,
    pub epoch_end: u64,
    pub evidence: Evidence,
}

impl PathologyEvent {
    /// Re-anchors an index-based event onto real epochs.
    pub fn at_epochs(mut self, epoch_start: u64, epoch_end: u64) -> Self {
        self.epoch_start = epoch_start;
        self.epoch_end = epoch_end;
        self
    }
}

fn require_len(series: &[f64], min: usize, what: &str) -> Result<()> {
    if series.len() < min {
        return Err(Error::InvalidInput(format!(
            "{what} needs at least {min} samples, got {}",
            series.len()
        )));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn detect_constancy(series: &[f64], cfg: &DetectorConfig) -> Result<Constancy> {
    require_len(series, 2, "constancy detection")?;
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    let mean = mean(series);
    let bound = cfg.const_abs_eps.max(cfg.const_rel_eps * mean.abs());
    Ok(Constancy {
        constant: range <= bound,
        range,
        mean,
    })
}

/// Least-squares slope against the sample index (one epoch per sample).
pub fn least_squares_slope(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    // Σ(t - t̄)(x - c) is the same for any c since Σ(t - t̄) = 0; c = x₀
    // keeps flat series at exactly zero.
    let x0 = series[0];
    let sxy: f64 = series
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as f64 - t_mean) * (x - x0))
        .sum();
    let sxx = n * (n * n - 1.0) / 12.0;
    sxy / sxx
}

pub fn detect_sharp_change(series: &[f64], cfg: &DetectorConfig) -> Result<SharpChange> {
    require_len(series, 2, "sharp-change detection")?;
    let slope = least_squares_slope(series);
    let max_jump = series
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let direction = if slope >= cfg.slope_threshold {
        Direction::Increase
    } else if slope <= -cfg.slope_threshold {
        Direction::Decrease
    } else {
        Direction::None
    };
    Ok(SharpChange {
        direction,
        slope,
        max_jump,
    })
}

/// Residual after subtracting a centered moving average of `2·half + 1`
/// taps, evaluated only where the full span fits.
pub fn detrended_residual(series: &[f64], half: usize) -> Vec<f64> {
    let span = 2 * half + 1;
    if series.len() < span {
        return Vec::new();
    }
    series
        .windows(span)
        .map(|w| w[half] - w.iter().sum::<f64>() / span as f64)
        .collect()
}

fn sign_changes(residual: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for &r in residual.iter().filter(|r| **r != 0.0) {
        if last != 0.0 && (r > 0.0) != (last > 0.0) {
            changes += 1;
        }
        last = r;
    }
    changes
}

pub fn detect_oscillation(series: &[f64], cfg: &DetectorConfig) -> Result<Oscillation> {
    let half = cfg.detrend_half_span();
    require_len(series, cfg.window.max(2 * half + 3), "oscillation detection")?;
    let residual = detrended_residual(series, half);
    let crossing_rate = sign_changes(&residual) as f64 / (residual.len() - 1) as f64;
    let (lo, hi) = residual
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let amplitude = hi - lo;
    let constant = detect_constancy(series, cfg)?.constant;
    Ok(Oscillation {
        oscillating: crossing_rate >= cfg.osc_min_crossings
            && amplitude >= cfg.osc_min_amp
            && !constant,
        crossing_rate,
        amplitude,
    })
}

/// Labels one G/D window. The returned event spans sample indices
/// `0..len-1`; see [`PathologyEvent::at_epochs`].
pub fn classify_window(g: &[f64], d: &[f64], cfg: &DetectorConfig) -> Result<PathologyEvent> {
    if g.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "generator window has {} samples, discriminator window has {}",
            g.len(),
            d.len()
        )));
    }
    let n = g.len();
    let mut evidence = Evidence {
        samples: n,
        ..Evidence::default()
    };
    let event = |kind, evidence| PathologyEvent {
        kind,
        epoch_start: 0,
        epoch_end: n.saturating_sub(1) as u64,
        evidence,
    };
    if n < MIN_CLASSIFY_LEN {
        return Ok(event(PathologyKind::Indeterminate, evidence));
    }

    let (gc, dc) = (detect_constancy(g, cfg)?, detect_constancy(d, cfg)?);
    let (gs, ds) = (detect_sharp_change(g, cfg)?, detect_sharp_change(d, cfg)?);
    evidence.g_mean = gc.mean;
    evidence.d_mean = dc.mean;
    evidence.g_range = gc.range;
    evidence.d_range = dc.range;
    evidence.g_slope = gs.slope;
    evidence.d_slope = ds.slope;
    evidence.g_max_jump = gs.max_jump;
    evidence.d_max_jump = ds.max_jump;

    let (go, dosc) = if n >= cfg.window {
        let (go, dosc) = (detect_oscillation(g, cfg)?, detect_oscillation(d, cfg)?);
        evidence.g_crossing_rate = Some(go.crossing_rate);
        evidence.d_crossing_rate = Some(dosc.crossing_rate);
        evidence.g_amplitude = Some(go.amplitude);
        evidence.d_amplitude = Some(dosc.amplitude);
        (go.oscillating, dosc.oscillating)
    } else {
        (false, false)
    };

    let smooth = gs.max_jump < cfg.jump_threshold && ds.max_jump < cfg.jump_threshold;
    let g_not_falling = gs.direction == Direction::Increase
        || gc.constant
        || (gs.direction == Direction::None && gs.slope >= 0.0);

    let (rule, kind) = if smooth && dc.mean < cfg.d_zero_eps && g_not_falling {
        (1, PathologyKind::ModeCollapse)
    } else if smooth && gs.direction == Direction::Increase && ds.direction == Direction::Decrease {
        (2, PathologyKind::ModeCollapse)
    } else if go && dosc {
        (3, PathologyKind::NonConvergence)
    } else if gc.constant
        && dc.constant
        && (gc.mean - 2.0 * dc.mean).abs() <= cfg.healthy_ratio_tol * gc.mean
    {
        (4, PathologyKind::Stable)
    } else if !smooth || (gc.constant && dc.constant) {
        (5, PathologyKind::Instability)
    } else {
        (6, PathologyKind::Indeterminate)
    };
    evidence.rule = rule;
    Ok(event(kind, evidence))
}

/// `true` when the window shows mode collapse, non-convergence or instability.
pub fn analyze_loss_patterns(recent_g: &[f64], recent_d: &[f64], cfg: &DetectorConfig) -> Result<bool> {
    Ok(classify_window(recent_g, recent_d, cfg)?.kind.is_pathology())
}

/// Labels every epoch of `series` by its trailing window of epochs
/// `(e - window, e]`.
pub fn classify_series(series: &LossSeries, cfg: &DetectorConfig) -> Result<Vec<PathologyEvent>> {
    let records = series.records();
    let g = series.g_losses();
    let d = series.d_losses();
    let width = cfg.window as u64;
    let mut start = 0;
    let mut out = Vec::with_capacity(records.len());
    for (end, rec) in records.iter().enumerate() {
        while rec.epoch >= width && records[start].epoch <= rec.epoch - width {
            start += 1;
        }
        let event = classify_window(&g[start..=end], &d[start..=end], cfg)?;
        out.push(event.at_epochs(records[start].epoch, rec.epoch));
    }
    Ok(out)
}

/// A maximal run of consecutive epochs sharing one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: PathologyKind,
    /// First and last labelled epoch of the run (window end epochs).
    pub epoch_start: u64,
    pub epoch_end: u64,
    pub epochs: usize,
}

pub fn segments(events: &[PathologyEvent]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for ev in events {
        match out.last_mut() {
            Some(seg) if seg.kind == ev.kind => {
                seg.epoch_end = ev.epoch_end;
                seg.epochs += 1;
            }
            _ => out.push(Segment {
                kind: ev.kind,
                epoch_start: ev.epoch_end,
                epoch_end: ev.epoch_end,
                epochs: 1,
            }),
        }
    }
    out
}
