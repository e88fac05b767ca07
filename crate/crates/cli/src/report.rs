//! Monitor reports and their renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use gan_sentinel_core::loss_patterns::Segment;
use gan_sentinel_core::metrics::MetricsConfig;
use gan_sentinel_core::sentinel::EvaluationRecord;
use gan_sentinel_core::{PathologyEvent, SentinelConfig, StopDecision, Thresholds};
use serde::{Deserialize, Serialize};

use crate::digest::InputDigest;

pub const TOOL: &str = "gan-sentinel";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_FILE: &str = "report.json";
pub const EPOCHS_FILE: &str = "epochs.csv";

/// Settings that shaped a monitor run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub sentinel: SentinelConfig,
    /// Sampling used for image snapshots; absent for loss-only runs.
    pub metrics: Option<MetricsConfig>,
    pub resample_thresholds: bool,
    pub loss_format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub decision: StopDecision,
    /// Thresholds at startup; absent when metrics were disabled.
    pub thresholds: Option<Thresholds>,
    /// Applied evaluations in epoch order.
    pub snapshots: Vec<EvaluationRecord>,
    /// Evaluation epochs with no snapshot directory.
    pub missing_snapshots: Vec<u64>,
    /// Maximal runs of one window label.
    pub segments: Vec<Segment>,
    /// The window that opened each segment, with its evidence.
    pub events: Vec<PathologyEvent>,
    pub config: ConfigEcho,
    /// Digests keyed by input role.
    pub inputs: BTreeMap<String, InputDigest>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(&self.decision)
    }

    pub fn render_text(&self) -> String {
        let d = &self.decision;
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.tool, self.version);
        if d.stopped {
            let _ = writeln!(out, "decision: stop at epoch {} ({})", d.stop_epoch, d.reason);
        } else {
            let _ = writeln!(out, "decision: running, last epoch {}", d.stop_epoch);
        }
        if let Some(th) = &self.thresholds {
            let _ = writeln!(
                out,
                "thresholds: ms-ssim {:.4} / {:.4}, fid {:.4} / {:.4}",
                th.msssim_th1, th.msssim_th2, th.fid_th1, th.fid_th2
            );
            let _ = writeln!(
                out,
                "best: epoch {}, ms-ssim {:.4}, fid {:.4}",
                d.best_epoch, d.best_msssim, d.best_fid
            );
        }
        if !self.snapshots.is_empty() {
            let _ = writeln!(out, "evaluations:");
            for rec in &self.snapshots {
                let s = &rec.snapshot;
                let _ = writeln!(
                    out,
                    "  epoch {:>6}  ms-ssim {:.4}  fid {:>10.4}  {:?}",
                    s.epoch, s.msssim_synth, s.fid_train_synth, rec.outcome
                );
            }
        }
        if !self.missing_snapshots.is_empty() {
            let list: Vec<String> = self.missing_snapshots.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "missing snapshots: {}", list.join(", "));
        }
        if !self.segments.is_empty() {
            let _ = writeln!(out, "loss timeline:");
            for s in &self.segments {
                let _ = writeln!(out, "  epochs {:>6} - {:<6} {}", s.epoch_start, s.epoch_end, s.kind);
            }
        }
        out
    }

    /// One row per evaluation, for plotting score curves.
    pub fn render_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "msssim_synth", "fid_train_synth", "outcome", "sample_seed"])?;
        for rec in &self.snapshots {
            let s = &rec.snapshot;
            w.write_record([
                s.epoch.to_string(),
                s.msssim_synth.to_string(),
                s.fid_train_synth.to_string(),
                serde_json::to_value(rec.outcome)?.as_str().unwrap_or_default().to_string(),
                s.sample_seed.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Process exit code for a decision: 10 and 11 for the two stop reasons,
/// 0 otherwise.
pub fn exit_code(d: &StopDecision) -> i32 {
    use gan_sentinel_core::StopReason::*;
    match d.reason {
        MetricStagnation => 10,
        LossPathologyPersistence => 11,
        MaxEpochsReached | NotStopped => 0,
    }
}

/// Per-epoch counters written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub label: Option<String>,
    pub loss_problem_count: u64,
    pub epochs_since_improvement: u64,
    pub msssim_synth: Option<f64>,
    pub fid_train_synth: Option<f64>,
    pub outcome: Option<String>,
}

pub fn write_epochs_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
