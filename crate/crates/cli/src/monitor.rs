//! The monitor loop: loss records in, stop decision out.
//!
//! Records are pulled one at a time, so a decision reached mid-stream is
//! final without reading the rest of the input. An evaluation epoch's
//! snapshot must exist by the time that epoch's loss record is read.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gan_sentinel_core::calibration::calibrate_with;
use gan_sentinel_core::loss_patterns::segments;
use gan_sentinel_core::metrics::{MetricsConfig, MetricsSnapshot, SnapshotScorer};
use gan_sentinel_core::sentinel::{EvaluationRecord, Status};
use gan_sentinel_core::simulator::METRICS_FILE;
use gan_sentinel_core::telemetry::{load_image_dir, snapshot_dir, LogFormat, LossLogReader};
use gan_sentinel_core::{ImageSet, PathologyEvent, SentinelState, Thresholds};

use crate::digest::{digest_dir, digest_file, Hasher, HashingReader};
use crate::report::{ConfigEcho, EpochRow, RunReport, TOOL, VERSION};
use crate::settings::Settings;

pub struct MonitorOutput {
    pub report: RunReport,
    pub rows: Vec<EpochRow>,
}

/// Image sets and scorer for runs whose snapshots hold images.
struct ImageContext {
    scorer: SnapshotScorer,
    train: ImageSet,
    test: Option<ImageSet>,
}

struct Run {
    seed: u64,
    state: SentinelState,
    snapshots_dir: Option<PathBuf>,
    images: Option<ImageContext>,
    resample: bool,
    snapshot_hash: Hasher,
    missing: Vec<u64>,
    rows: Vec<EpochRow>,
}

pub fn loss_format(settings: &Settings, source: &str) -> Result<LogFormat> {
    Ok(match settings.get::<LogFormat>("loss_format")? {
        Some(f) => f,
        None if source == "-" => LogFormat::Jsonl,
        None => LogFormat::from_path(Path::new(source)),
    })
}

pub fn run_monitor(settings: &Settings) -> Result<MonitorOutput> {
    let source: String = settings.require("loss_log")?;
    if source == "-" {
        let stdin = io::stdin();
        run_monitor_on(settings, stdin.lock(), &source)
    } else {
        let file = fs::File::open(&source).with_context(|| format!("opening {source}"))?;
        run_monitor_on(settings, BufReader::new(file), &source)
    }
}

/// Runs the monitor over an already opened loss stream.
pub fn run_monitor_on<R: BufRead>(settings: &Settings, reader: R, source: &str) -> Result<MonitorOutput> {
    let seed = settings.seed()?;
    let format = loss_format(settings, source)?;
    let snapshots_dir = settings.path("snapshots_dir");
    let resample = settings.flag("resample_thresholds")?;
    let mut inputs = BTreeMap::new();
    if let Some(path) = settings.source() {
        inputs.insert("config".to_string(), digest_file(path)?);
    }

    let mut cfg = settings.sentinel()?;
    cfg.metrics_enabled = snapshots_dir.is_some();

    let train_dir = settings.path("train_dir");
    let test_dir = settings.path("test_dir");
    let thresholds_file = settings.path("thresholds");
    let mut thresholds: Option<Thresholds> = None;
    if let Some(path) = &thresholds_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let th: Thresholds =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        th.validate()?;
        inputs.insert("thresholds".to_string(), digest_file(path)?);
        thresholds = Some(th);
    }

    let mut metrics: Option<MetricsConfig> = None;
    let mut images = None;
    if cfg.metrics_enabled {
        let base = thresholds.as_ref().map(|t| t.sampling.clone()).unwrap_or_default();
        let mcfg = settings.metrics_over(base)?;
        if let Some(dir) = &train_dir {
            let train = load_image_dir(dir)?;
            inputs.insert("train_dir".to_string(), digest_dir(dir)?);
            let test = match &test_dir {
                Some(dir) => {
                    inputs.insert("test_dir".to_string(), digest_dir(dir)?);
                    Some(load_image_dir(dir)?)
                }
                None => None,
            };
            let scorer = SnapshotScorer::new(&train, &mcfg)?;
            if thresholds.is_none() {
                let Some(test) = &test else {
                    bail!("without --thresholds, calibration needs both --train-dir and --test-dir");
                };
                thresholds = Some(calibrate_with(&scorer, &train, test, seed)?);
            }
            images = Some(ImageContext { scorer, train, test });
        }
        if thresholds.is_none() {
            bail!("monitoring snapshots needs --thresholds or --train-dir with --test-dir");
        }
        if resample && images.as_ref().and_then(|c| c.test.as_ref()).is_none() {
            bail!("--resample-thresholds needs --train-dir and --test-dir");
        }
        metrics = Some(mcfg);
    }

    let th = thresholds.clone().unwrap_or_else(|| Thresholds::from_values(1.0, 1.0, 0.0, 0.0));
    let state = SentinelState::new(cfg.clone(), &th)?;
    let mut run = Run {
        seed,
        state,
        snapshots_dir,
        images,
        resample,
        snapshot_hash: Hasher::default(),
        missing: Vec::new(),
        rows: Vec::new(),
    };

    let mut reader = HashingReader::new(reader);
    run.consume(LossLogReader::new(&mut reader, format))?;
    inputs.insert("loss_log".to_string(), reader.digest());
    if cfg.metrics_enabled {
        inputs.insert("snapshots".to_string(), run.snapshot_hash.clone().finish());
    }

    let decision = run.state.conclude();
    let events = segment_openers(run.state.events());
    let report = RunReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        decision,
        thresholds: if cfg.metrics_enabled { thresholds } else { None },
        snapshots: run.state.evaluations().to_vec(),
        missing_snapshots: run.missing,
        segments: segments(run.state.events()),
        events,
        config: ConfigEcho {
            seed,
            sentinel: cfg,
            metrics,
            resample_thresholds: resample,
            loss_format: match format {
                LogFormat::Jsonl => "jsonl".into(),
                LogFormat::Csv => "csv".into(),
            },
        },
        inputs,
    };
    Ok(MonitorOutput { report, rows: run.rows })
}

fn segment_openers(events: &[PathologyEvent]) -> Vec<PathologyEvent> {
    let mut out: Vec<PathologyEvent> = Vec::new();
    for ev in events {
        if out.last().map(|o| o.kind) != Some(ev.kind) {
            out.push(*ev);
        }
    }
    out
}

impl Run {
    fn consume<R: BufRead>(&mut self, records: LossLogReader<R>) -> Result<()> {
        for rec in records {
            let rec = rec?;
            let obs = self.state.observe_epoch(rec)?;
            if self.state.current_epoch() != Some(rec.epoch) {
                // the run closed before this record (budget exhausted)
                break;
            }
            self.rows.push(EpochRow {
                epoch: rec.epoch,
                g_loss: rec.g_loss,
                d_loss: rec.d_loss,
                label: obs.event.map(|e| e.kind.to_string()),
                loss_problem_count: obs.loss_problem_count,
                epochs_since_improvement: obs.epochs_since_improvement,
                msssim_synth: None,
                fid_train_synth: None,
                outcome: None,
            });
            if obs.status == Status::Stop {
                break;
            }
            let cfg = self.state.config();
            if cfg.metrics_enabled && rec.epoch % cfg.eval_interval == 0 && self.evaluate(rec.epoch)? == Status::Stop {
                break;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, epoch: u64) -> Result<Status> {
        let root = self.snapshots_dir.as_ref().expect("metrics enabled without snapshots");
        let dir = snapshot_dir(root, epoch);
        if !dir.is_dir() {
            self.missing.push(epoch);
            return Ok(Status::Continue);
        }
        self.snapshot_hash.update(format!("epoch_{epoch}\n").as_bytes());
        self.snapshot_hash.dir(&dir)?;
        let sample_seed = self.seed.wrapping_add(epoch);
        let metrics_file = dir.join(METRICS_FILE);
        let snap = if metrics_file.is_file() {
            let text = fs::read_to_string(&metrics_file)?;
            let snap: MetricsSnapshot = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", metrics_file.display()))?;
            if snap.epoch != epoch {
                bail!("{} is for epoch {}, expected {epoch}", metrics_file.display(), snap.epoch);
            }
            snap
        } else {
            let Some(ctx) = &self.images else {
                bail!("image snapshot {} needs --train-dir to be scored", dir.display());
            };
            let synth = load_image_dir(&dir)?;
            ctx.scorer.score(&synth, epoch, sample_seed)?
        };
        if self.resample {
            let ctx = self.images.as_ref().expect("checked at startup");
            let test = ctx.test.as_ref().expect("checked at startup");
            let th = calibrate_with(&ctx.scorer, &ctx.train, test, sample_seed)?;
            self.state.refresh_thresholds(&th)?;
        }
        let status = self.state.observe_evaluation(snap)?;
        let rec: EvaluationRecord = *self.state.evaluations().last().expect("just recorded");
        let row = self.rows.last_mut().expect("row pushed for this epoch");
        row.msssim_synth = Some(rec.snapshot.msssim_synth);
        row.fid_train_synth = Some(rec.snapshot.fid_train_synth);
        row.outcome = Some(serde_json::to_value(rec.outcome)?.as_str().unwrap_or_default().to_string());
        row.epochs_since_improvement = self.state.epochs_since_improvement();
        Ok(status)
    }
}
