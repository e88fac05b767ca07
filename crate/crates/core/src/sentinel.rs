//! Early-stopping state machine.
//!
//! Feed one [`LossRecord`] per epoch through [`SentinelState::observe_epoch`]
//! and, on evaluation epochs, the matching [`MetricsSnapshot`] through
//! [`SentinelState::observe_evaluation`]. Training stops when the loss
//! window stays pathological for `patience` consecutive epochs, when the
//! metrics fail to improve jointly for `patience` epochs, or at `max_epochs`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{effective_bests_with, ThresholdMode, Thresholds};
use crate::error::{Error, Result};
use crate::loss_patterns::{classify_window, detect_constancy, DetectorConfig, PathologyEvent};
use crate::metrics::MetricsSnapshot;
use crate::telemetry::LossRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentinelConfig {
    pub max_epochs: u64,
    /// Shared patience in epochs.
    pub patience: u64,
    /// Overrides `patience` for loss-pathology persistence.
    pub loss_patience: Option<u64>,
    /// Overrides `patience` for metric stagnation.
    pub metric_patience: Option<u64>,
    pub eval_interval: u64,
    /// Apply an evaluation only when both loss series are flat.
    pub gate_on_constancy: bool,
    pub metrics_enabled: bool,
    pub threshold_mode: ThresholdMode,
    pub detector: DetectorConfig,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 200,
            loss_patience: None,
            metric_patience: None,
            eval_interval: 50,
            gate_on_constancy: false,
            metrics_enabled: true,
            threshold_mode: ThresholdMode::Min,
            detector: DetectorConfig::default(),
        }
    }
}

impl SentinelConfig {
    pub fn loss_patience(&self) -> u64 {
        self.loss_patience.unwrap_or(self.patience)
    }

    pub fn metric_patience(&self) -> u64 {
        self.metric_patience.unwrap_or(self.patience)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.eval_interval == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs, patience and eval_interval must be >= 1".into(),
            ));
        }
        if self.loss_patience() == 0 || self.metric_patience() == 0 {
            return Err(Error::Config("patience overrides must be >= 1".into()));
        }
        if self.metrics_enabled && self.metric_patience() < self.eval_interval {
            return Err(Error::Config(format!(
                "patience {} is shorter than the evaluation interval {}",
                self.metric_patience(),
                self.eval_interval
            )));
        }
        self.detector.validate()
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::Config(format!("{key}: `{v}` is not a non-negative integer")))
        };
        match key {
            "max_epochs" => self.max_epochs = int(value)?,
            "patience" => self.patience = int(value)?,
            "loss_patience" => self.loss_patience = Some(int(value)?),
            "metric_patience" => self.metric_patience = Some(int(value)?),
            "eval_interval" => self.eval_interval = int(value)?,
            "gate_on_constancy" => {
                self.gate_on_constancy = value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: `{value}` is not true/false")))?
            }
            "threshold_mode" => self.threshold_mode = value.parse()?,
            _ => return self.detector.apply(key, value),
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    LossPathologyPersistence,
    MetricStagnation,
    MaxEpochsReached,
    NotStopped,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::LossPathologyPersistence => "LossPathologyPersistence",
            StopReason::MetricStagnation => "MetricStagnation",
            StopReason::MaxEpochsReached => "MaxEpochsReached",
            StopReason::NotStopped => "NotStopped",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stopped: bool,
    /// Epoch of the stop, or the last observed epoch when still running.
    pub stop_epoch: u64,
    pub reason: StopReason,
    pub best_msssim: f64,
    pub best_fid: f64,
    pub best_epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationOutcome {
    Improved,
    NoImprovement,
    /// Gated out because the loss window was not flat.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    #[serde(flatten)]
    pub snapshot: MetricsSnapshot,
    pub outcome: EvaluationOutcome,
}

/// Per-epoch result of [`SentinelState::observe_epoch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub status: Status,
    /// Label of the trailing window, once the window is full.
    pub event: Option<PathologyEvent>,
    pub loss_problem_count: u64,
    pub epochs_since_improvement: u64,
}

#[derive(Debug, Clone)]
pub struct SentinelState {
    cfg: SentinelConfig,
    current_epoch: Option<u64>,
    loss_problem_count: u64,
    best_msssim: f64,
    best_fid: f64,
    best_epoch: u64,
    epochs_since_improvement: u64,
    recent_g: VecDeque<f64>,
    recent_d: VecDeque<f64>,
    recent_epochs: VecDeque<u64>,
    events: Vec<PathologyEvent>,
    evaluations: Vec<EvaluationRecord>,
    stop: Option<(u64, StopReason)>,
}

impl SentinelState {
    pub fn new(cfg: SentinelConfig, th: &Thresholds) -> Result<Self> {
        cfg.validate()?;
        th.validate()?;
        let bests = effective_bests_with(th, cfg.threshold_mode);
        let window = cfg.detector.window;
        Ok(Self {
            cfg,
            current_epoch: None,
            loss_problem_count: 0,
            best_msssim: bests.best_msssim,
            best_fid: bests.best_fid,
            best_epoch: 0,
            epochs_since_improvement: 0,
            recent_g: VecDeque::with_capacity(window),
            recent_d: VecDeque::with_capacity(window),
            recent_epochs: VecDeque::with_capacity(window),
            events: Vec::new(),
            evaluations: Vec::new(),
            stop: None,
        })
    }

    pub fn config(&self) -> &SentinelConfig {
        &self.cfg
    }

    pub fn current_epoch(&self) -> Option<u64> {
        self.current_epoch
    }

    pub fn loss_problem_count(&self) -> u64 {
        self.loss_problem_count
    }

    pub fn epochs_since_improvement(&self) -> u64 {
        self.epochs_since_improvement
    }

    pub fn best_epoch(&self) -> u64 {
        self.best_epoch
    }

    /// Labels of every full window seen so far.
    pub fn events(&self) -> &[PathologyEvent] {
        &self.events
    }

    pub fn evaluations(&self) -> &[EvaluationRecord] {
        &self.evaluations
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.is_some()
    }

    fn window_full(&self) -> bool {
        self.recent_g.len() == self.cfg.detector.window
    }

    fn is_eval_epoch(&self, epoch: u64) -> bool {
        self.cfg.metrics_enabled && epoch % self.cfg.eval_interval == 0
    }

    fn observation(&self, event: Option<PathologyEvent>) -> Observation {
        Observation {
            status: if self.stop.is_some() { Status::Stop } else { Status::Continue },
            event,
            loss_problem_count: self.loss_problem_count,
            epochs_since_improvement: self.epochs_since_improvement,
        }
    }

    /// A run that reached `max_epochs` on an evaluation epoch waits for the
    /// snapshot before stopping; anything else arriving first closes it.
    fn close_pending_max(&mut self) -> bool {
        match self.current_epoch {
            Some(e) if self.stop.is_none() && e >= self.cfg.max_epochs => {
                self.stop = Some((e, StopReason::MaxEpochsReached));
                true
            }
            _ => false,
        }
    }

    pub fn observe_epoch(&mut self, rec: LossRecord) -> Result<Observation> {
        if self.stop.is_some() || self.close_pending_max() {
            return Ok(self.observation(None));
        }
        if let Some(last) = self.current_epoch {
            if rec.epoch <= last {
                return Err(Error::OutOfOrder { got: rec.epoch, last });
            }
        }
        if !(rec.g_loss.is_finite() && rec.d_loss.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite loss at epoch {}", rec.epoch)));
        }
        if rec.epoch > self.cfg.max_epochs {
            // Past the budget: close at the last epoch actually trained.
            self.stop = Some((self.current_epoch.unwrap_or(0), StopReason::MaxEpochsReached));
            return Ok(self.observation(None));
        }

        self.current_epoch = Some(rec.epoch);
        self.epochs_since_improvement = rec.epoch - self.best_epoch;
        if self.window_full() {
            self.recent_g.pop_front();
            self.recent_d.pop_front();
            self.recent_epochs.pop_front();
        }
        self.recent_g.push_back(rec.g_loss);
        self.recent_d.push_back(rec.d_loss);
        self.recent_epochs.push_back(rec.epoch);

        let mut event = None;
        if self.window_full() {
            let g = self.recent_g.make_contiguous();
            let d = self.recent_d.make_contiguous();
            let ev = classify_window(g, d, &self.cfg.detector)?
                .at_epochs(self.recent_epochs[0], rec.epoch);
            if ev.kind.is_pathology() {
                self.loss_problem_count += 1;
            } else {
                self.loss_problem_count = 0;
            }
            self.events.push(ev);
            event = Some(ev);
        }

        if self.loss_problem_count >= self.cfg.loss_patience() {
            self.stop = Some((rec.epoch, StopReason::LossPathologyPersistence));
        } else if rec.epoch >= self.cfg.max_epochs && !self.is_eval_epoch(rec.epoch) {
            self.stop = Some((rec.epoch, StopReason::MaxEpochsReached));
        }
        Ok(self.observation(event))
    }

    /// Applies a snapshot taken at the current (evaluation-aligned) epoch.
    pub fn observe_evaluation(&mut self, snap: MetricsSnapshot) -> Result<Status> {
        if self.stop.is_some() {
            return Ok(Status::Stop);
        }
        if snap.epoch % self.cfg.eval_interval != 0 {
            return Err(Error::InvalidInput(format!(
                "snapshot epoch {} is not a multiple of the evaluation interval {}",
                snap.epoch, self.cfg.eval_interval
            )));
        }
        if self.current_epoch != Some(snap.epoch) {
            return Err(Error::InvalidInput(format!(
                "snapshot for epoch {} must follow the loss record of that epoch (current epoch: {:?})",
                snap.epoch, self.current_epoch
            )));
        }
        if let Some(prev) = self.evaluations.last() {
            if prev.snapshot.epoch == snap.epoch {
                return Err(Error::DuplicateEpoch(snap.epoch));
            }
        }
        if !(snap.msssim_synth.is_finite() && snap.fid_train_synth.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite scores at epoch {}", snap.epoch)));
        }

        let outcome = if self.cfg.gate_on_constancy && !self.window_is_flat()? {
            EvaluationOutcome::Skipped
        } else if snap.msssim_synth <= self.best_msssim && snap.fid_train_synth <= self.best_fid {
            self.best_msssim = snap.msssim_synth;
            self.best_fid = snap.fid_train_synth;
            self.best_epoch = snap.epoch;
            self.epochs_since_improvement = 0;
            EvaluationOutcome::Improved
        } else {
            self.epochs_since_improvement = snap.epoch - self.best_epoch;
            EvaluationOutcome::NoImprovement
        };
        self.evaluations.push(EvaluationRecord { snapshot: snap, outcome });

        if outcome == EvaluationOutcome::NoImprovement
            && self.epochs_since_improvement >= self.cfg.metric_patience()
        {
            self.stop = Some((snap.epoch, StopReason::MetricStagnation));
        } else if snap.epoch >= self.cfg.max_epochs {
            self.stop = Some((snap.epoch, StopReason::MaxEpochsReached));
        }
        Ok(if self.stop.is_some() { Status::Stop } else { Status::Continue })
    }

    fn window_is_flat(&self) -> Result<bool> {
        if !self.window_full() {
            return Ok(false);
        }
        let g: Vec<f64> = self.recent_g.iter().copied().collect();
        let d: Vec<f64> = self.recent_d.iter().copied().collect();
        Ok(detect_constancy(&g, &self.cfg.detector)?.constant
            && detect_constancy(&d, &self.cfg.detector)?.constant)
    }

    /// Lowers the bests to freshly recomputed thresholds; bests never rise.
    pub fn refresh_thresholds(&mut self, th: &Thresholds) -> Result<()> {
        th.validate()?;
        let fresh = effective_bests_with(th, self.cfg.threshold_mode);
        self.best_msssim = self.best_msssim.min(fresh.best_msssim);
        self.best_fid = self.best_fid.min(fresh.best_fid);
        Ok(())
    }

    /// Marks the end of input. A run that reached `max_epochs` without a
    /// final snapshot is closed as [`StopReason::MaxEpochsReached`].
    pub fn conclude(&mut self) -> StopDecision {
        self.close_pending_max();
        self.decision()
    }

    pub fn decision(&self) -> StopDecision {
        let (stopped, stop_epoch, reason) = match self.stop {
            Some((e, r)) => (true, e, r),
            None => (false, self.current_epoch.unwrap_or(0), StopReason::NotStopped),
        };
        StopDecision {
            stopped,
            stop_epoch,
            reason,
            best_msssim: self.best_msssim,
            best_fid: self.best_fid,
            best_epoch: self.best_epoch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_patterns::PathologyKind;

    fn th() -> Thresholds {
        Thresholds::from_values(0.45, 0.50, 12.0, 15.0)
    }

    fn snap(epoch: u64, ms: f64, fid: f64) -> MetricsSnapshot {
        MetricsSnapshot {
            epoch,
            msssim_synth: ms,
            fid_train_synth: fid,
            sample_seed: 0,
            n_pairs: 50,
            n_samples: 100,
        }
    }

    fn healthy(epoch: u64) -> LossRecord {
        LossRecord::new(epoch, 1.0, 0.5)
    }

    #[test]
    fn constructor_contract() {
        let s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        let d = s.decision();
        assert_eq!((d.best_msssim, d.best_fid), (0.45, 12.0));
        assert_eq!(s.loss_problem_count(), 0);
        assert_eq!(d.reason, StopReason::NotStopped);
        assert!(!d.stopped);
    }

    #[test]
    fn patience_versus_interval() {
        let ok = SentinelConfig { patience: 50, ..Default::default() };
        assert!(SentinelState::new(ok, &th()).is_ok());
        let bad = SentinelConfig { patience: 20, ..Default::default() };
        assert!(matches!(SentinelState::new(bad, &th()), Err(Error::Config(_))));
        let no_metrics = SentinelConfig { patience: 20, metrics_enabled: false, ..Default::default() };
        assert!(SentinelState::new(no_metrics, &th()).is_ok());
    }

    #[test]
    fn out_of_order_rejected() {
        let mut s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        s.observe_epoch(healthy(5)).unwrap();
        assert!(matches!(s.observe_epoch(healthy(5)), Err(Error::OutOfOrder { got: 5, last: 5 })));
        assert!(s.observe_epoch(healthy(3)).is_err());
        // forward gaps are fine
        s.observe_epoch(healthy(9)).unwrap();
    }

    #[test]
    fn single_anomalous_window_resets() {
        let cfg = SentinelConfig {
            detector: DetectorConfig { window: 10, ..Default::default() },
            ..Default::default()
        };
        let mut s = SentinelState::new(cfg, &th()).unwrap();
        for e in 1..=10 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        let jump = s.observe_epoch(LossRecord::new(11, 5.0, 0.5)).unwrap();
        assert_eq!(jump.event.unwrap().kind, PathologyKind::Instability);
        assert_eq!(s.loss_problem_count(), 1);
        for e in 12..=25 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        assert_eq!(s.loss_problem_count(), 0);
    }

    #[test]
    fn joint_improvement_only() {
        let mut s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        for e in 1..=50 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        s.observe_evaluation(snap(50, 0.40, 13.0)).unwrap();
        let d = s.decision();
        assert_eq!((d.best_msssim, d.best_fid, d.best_epoch), (0.45, 12.0, 0));
        assert_eq!(s.evaluations()[0].outcome, EvaluationOutcome::NoImprovement);
        for e in 51..=100 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        // ties count
        s.observe_evaluation(snap(100, 0.45, 12.0)).unwrap();
        assert_eq!(s.decision().best_epoch, 100);
    }

    #[test]
    fn misaligned_snapshot_rejected() {
        let mut s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        for e in 1..=60 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        assert!(s.observe_evaluation(snap(60, 0.1, 1.0)).is_err());
        assert!(s.observe_evaluation(snap(50, 0.1, 1.0)).is_err());
    }

    #[test]
    fn stagnation_from_start_stops_at_patience() {
        let mut s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        let mut stop = None;
        for e in 1..=1000 {
            s.observe_epoch(healthy(e)).unwrap();
            if e % 50 == 0 && s.observe_evaluation(snap(e, 0.9, 99.0)).unwrap() == Status::Stop {
                stop = Some(e);
                break;
            }
        }
        assert_eq!(stop, Some(200));
        assert_eq!(s.decision().reason, StopReason::MetricStagnation);
    }

    #[test]
    fn max_epochs_waits_for_final_snapshot() {
        let cfg = SentinelConfig { max_epochs: 100, patience: 100, ..Default::default() };
        let mut s = SentinelState::new(cfg.clone(), &th()).unwrap();
        for e in 1..=100 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        assert!(!s.is_stopped());
        s.observe_evaluation(snap(100, 0.9, 99.0)).unwrap();
        let d = s.decision();
        assert_eq!((d.reason, d.stop_epoch), (StopReason::MetricStagnation, 100));

        let mut s = SentinelState::new(cfg, &th()).unwrap();
        for e in 1..=100 {
            s.observe_epoch(healthy(e)).unwrap();
        }
        let d = s.conclude();
        assert_eq!((d.reason, d.stop_epoch), (StopReason::MaxEpochsReached, 100));
    }

    #[test]
    fn gate_skips_when_window_moves() {
        let cfg = SentinelConfig { gate_on_constancy: true, ..Default::default() };
        let mut s = SentinelState::new(cfg, &th()).unwrap();
        for e in 1..=50 {
            s.observe_epoch(LossRecord::new(e, e as f64, 0.5)).unwrap();
        }
        s.observe_evaluation(snap(50, 0.1, 1.0)).unwrap();
        assert_eq!(s.evaluations()[0].outcome, EvaluationOutcome::Skipped);
        assert_eq!(s.decision().best_epoch, 0);
    }

    #[test]
    fn refresh_never_raises_bests() {
        let mut s = SentinelState::new(SentinelConfig::default(), &th()).unwrap();
        s.refresh_thresholds(&Thresholds::from_values(0.6, 0.7, 20.0, 30.0)).unwrap();
        assert_eq!(s.decision().best_msssim, 0.45);
        s.refresh_thresholds(&Thresholds::from_values(0.3, 0.7, 20.0, 10.0)).unwrap();
        let d = s.decision();
        assert_eq!((d.best_msssim, d.best_fid), (0.3, 10.0));
    }

    #[test]
    fn config_kv() {
        let map = crate::config::parse_kv("patience = 100\nwindow = 40\nthreshold_mode = max\n").unwrap();
        let cfg = SentinelConfig::from_kv(&map).unwrap();
        assert_eq!(cfg.patience, 100);
        assert_eq!(cfg.detector.window, 40);
        assert_eq!(cfg.threshold_mode, ThresholdMode::Max);
    }
}
