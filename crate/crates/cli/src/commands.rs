use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gan_sentinel_core::calibration::calibrate_thresholds;
use gan_sentinel_core::loss_patterns::{classify_series, segments, Segment, MIN_CLASSIFY_LEN};
use gan_sentinel_core::metrics::{embed, fid, mean_ms_ssim, sample_block, select_rows, MetricsConfig};
use gan_sentinel_core::simulator::{
    emit_run, image_run, loss_run, scripted_run, Scenario, ScenarioKind, Script, THRESHOLDS_FILE,
};
use gan_sentinel_core::telemetry::{load_image_dir, parse_loss_log, LogFormat};
use gan_sentinel_core::{DetectorConfig, PathologyEvent};
use serde::Serialize;

use crate::args::{
    AnalyzeArgs, CalibrateArgs, Cli, Command, FidArgs, Format, MonitorArgs, MsSsimArgs, ReportArgs,
    SimulateArgs,
};
use crate::digest::{digest_dir, digest_file, InputDigest};
use crate::monitor::{loss_format, run_monitor};
use crate::report::{write_epochs_csv, RunReport, EPOCHS_FILE, REPORT_FILE};
use crate::settings::Settings;

/// Exit code for errors of any kind.
pub const EXIT_ERROR: i32 = 2;

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut s = Settings::load(cli.global.config.as_deref())?;
    s.set("seed", cli.global.seed);
    s.set("output", cli.global.output.as_ref().map(|p| p.display()));
    let format = match cli.global.format {
        Some(f) => Some(f),
        None => match s.raw("format") {
            Some("json") => Some(Format::Json),
            Some("csv") => Some(Format::Csv),
            Some(other) => bail!("format: expected json or csv, got `{other}`"),
            None => None,
        },
    };
    match cli.command {
        Command::Calibrate(a) => calibrate(s, &a).map(|_| 0),
        Command::Monitor(a) => monitor(s, &a),
        Command::AnalyzeLoss(a) => analyze_loss(s, &a, format).map(|_| 0),
        Command::MsSsim(a) => ms_ssim(s, &a, format).map(|_| 0),
        Command::Fid(a) => fid_cmd(s, &a, format).map(|_| 0),
        Command::Simulate(a) => simulate(s, &a).map(|_| 0),
        Command::Report(a) => report(s, &a, format).map(|_| 0),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes `name` into the output directory when one is set, else prints.
fn emit(s: &Settings, name: &str, text: &str) -> Result<()> {
    match s.path("output") {
        Some(dir) => write_file(&dir.join(name), text),
        None => print(text),
    }
}

fn calibrate(mut s: Settings, a: &CalibrateArgs) -> Result<()> {
    s.set("train_dir", a.train_dir.as_ref().map(|p| p.display()));
    s.set("test_dir", a.test_dir.as_ref().map(|p| p.display()));
    s.overlay_sampling(&a.sampling);
    let train = load_image_dir(&s.require::<PathBuf>("train_dir")?)?;
    let test = load_image_dir(&s.require::<PathBuf>("test_dir")?)?;
    let th = calibrate_thresholds(&train, &test, s.seed()?, &s.metrics()?)?;
    emit(&s, THRESHOLDS_FILE, &json_line(&th)?)
}

fn monitor(mut s: Settings, a: &MonitorArgs) -> Result<i32> {
    s.set("loss_log", a.loss_log.as_ref());
    s.set("loss_format", a.loss_format.as_ref());
    s.set("snapshots_dir", a.snapshots_dir.as_ref().map(|p| p.display()));
    s.set("thresholds", a.thresholds.as_ref().map(|p| p.display()));
    s.set("train_dir", a.train_dir.as_ref().map(|p| p.display()));
    s.set("test_dir", a.test_dir.as_ref().map(|p| p.display()));
    s.set("patience", a.patience);
    s.set("loss_patience", a.loss_patience);
    s.set("metric_patience", a.metric_patience);
    s.set("eval_interval", a.eval_interval);
    s.set("max_epochs", a.max_epochs);
    s.switch("gate_on_constancy", a.gate_on_constancy);
    s.set("threshold_mode", a.threshold_mode.as_ref());
    s.switch("resample_thresholds", a.resample_thresholds);
    s.overlay_detector(&a.detector);
    s.overlay_sampling(&a.sampling);

    let out = s.path("output").unwrap_or_else(|| PathBuf::from("."));
    let result = run_monitor(&s)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(REPORT_FILE), &result.report.to_json()?)?;
    write_epochs_csv(&out.join(EPOCHS_FILE), &result.rows)?;
    print(&json_line(&result.report.decision)?)?;
    Ok(result.report.exit_code())
}

#[derive(Serialize)]
struct Timeline {
    window: usize,
    segments: Vec<Segment>,
    events: Vec<PathologyEvent>,
    inputs: std::collections::BTreeMap<String, InputDigest>,
}

/// Window labels for a whole log, merged into segments. Epochs whose
/// trailing window is too short to label are left out.
pub fn timeline(
    text: &[u8],
    format: LogFormat,
    cfg: &DetectorConfig,
) -> Result<(Vec<Segment>, Vec<PathologyEvent>)> {
    let series = parse_loss_log(text, format)?;
    let events: Vec<PathologyEvent> = classify_series(&series, cfg)?
        .into_iter()
        .filter(|e| e.evidence.samples >= MIN_CLASSIFY_LEN)
        .collect();
    let segs = segments(&events);
    let mut openers: Vec<PathologyEvent> = Vec::new();
    for ev in &events {
        if openers.last().map(|o| o.kind) != Some(ev.kind) {
            openers.push(*ev);
        }
    }
    Ok((segs, openers))
}

fn analyze_loss(mut s: Settings, a: &AnalyzeArgs, format: Option<Format>) -> Result<()> {
    s.set("loss_log", a.loss_log.as_ref().map(|p| p.display()));
    s.set("loss_format", a.loss_format.as_ref());
    s.overlay_detector(&a.detector);
    let path: PathBuf = s.require("loss_log")?;
    let cfg = s.detector()?;
    let fmt = loss_format(&s, &path.to_string_lossy())?;
    let text = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let (segments, events) = timeline(&text, fmt, &cfg)?;
    match format.unwrap_or(Format::Json) {
        Format::Json => {
            let t = Timeline {
                window: cfg.window,
                segments,
                events,
                inputs: [("loss_log".to_string(), digest_file(&path)?)].into(),
            };
            emit(&s, "timeline.json", &json_line(&t)?)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for seg in &segments {
                w.serialize(seg)?;
            }
            emit(&s, "timeline.csv", &String::from_utf8(w.into_inner()?)?)
        }
    }
}

#[derive(Serialize)]
struct MsSsimOutput {
    ms_ssim: f64,
    n_images: usize,
    n_pairs: usize,
    seed: u64,
    width: usize,
    height: usize,
    num_scales: usize,
    scale_weights: Vec<f64>,
    input: InputDigest,
}

fn ms_ssim(mut s: Settings, a: &MsSsimArgs, format: Option<Format>) -> Result<()> {
    s.set("dir", a.dir.as_ref().map(|p| p.display()));
    s.overlay_sampling(&a.sampling);
    let dir: PathBuf = s.require("dir")?;
    let cfg = s.metrics()?;
    let seed = s.seed()?;
    let set = load_image_dir(&dir)?;
    let score = mean_ms_ssim(&set, cfg.n_pairs, seed, &cfg.ssim)?;
    let scales = cfg.ssim.resolve_scales(set.width().min(set.height()))?;
    let out = MsSsimOutput {
        ms_ssim: score,
        n_images: set.len(),
        n_pairs: cfg.n_pairs,
        seed,
        width: set.width(),
        height: set.height(),
        num_scales: scales,
        scale_weights: cfg.ssim.weights_for(scales),
        input: digest_dir(&dir)?,
    };
    match format.unwrap_or(Format::Json) {
        Format::Json => print(&json_line(&out)?),
        Format::Csv => print(&format!(
            "ms_ssim,n_images,n_pairs,seed,num_scales\n{},{},{},{},{}\n",
            out.ms_ssim, out.n_images, out.n_pairs, out.seed, out.num_scales
        )),
    }
}

#[derive(Serialize)]
struct FidOutput {
    fid: f64,
    n_a: usize,
    n_b: usize,
    n_samples: usize,
    seed: u64,
    /// Rows actually drawn from each set.
    sampled_a: usize,
    sampled_b: usize,
    extractor: gan_sentinel_core::FeatureExtractor,
    inputs: std::collections::BTreeMap<String, InputDigest>,
}

/// FID between block 0 of each set's seeded permutation, so a directory
/// compared with itself scores (almost) exactly zero.
fn fid_cmd(mut s: Settings, a: &FidArgs, format: Option<Format>) -> Result<()> {
    s.set("a", a.a.as_ref().map(|p| p.display()));
    s.set("b", a.b.as_ref().map(|p| p.display()));
    s.overlay_sampling(&a.sampling);
    let (da, db): (PathBuf, PathBuf) = (s.require("a")?, s.require("b")?);
    let cfg: MetricsConfig = s.metrics()?;
    let seed = s.seed()?;
    let (sa, sb) = (load_image_dir(&da)?, load_image_dir(&db)?);
    if (sa.width(), sa.height()) != (sb.width(), sb.height()) {
        bail!(
            "image sizes differ: {}x{} vs {}x{}",
            sa.width(),
            sa.height(),
            sb.width(),
            sb.height()
        );
    }
    let (fa, fb) = (embed(&sa, &cfg.extractor)?, embed(&sb, &cfg.extractor)?);
    let xa = select_rows(&fa, &sample_block(sa.len(), cfg.n_samples, seed, 0).indices);
    let xb = select_rows(&fb, &sample_block(sb.len(), cfg.n_samples, seed, 0).indices);
    let value = fid(&xa, &xb)?;
    let out = FidOutput {
        fid: value,
        n_a: sa.len(),
        n_b: sb.len(),
        n_samples: cfg.n_samples,
        seed,
        sampled_a: xa.nrows(),
        sampled_b: xb.nrows(),
        extractor: cfg.extractor.clone(),
        inputs: [("a".to_string(), digest_dir(&da)?), ("b".to_string(), digest_dir(&db)?)].into(),
    };
    match format.unwrap_or(Format::Json) {
        Format::Json => print(&json_line(&out)?),
        Format::Csv => print(&format!(
            "fid,n_a,n_b,n_samples,seed\n{},{},{},{},{}\n",
            out.fid, out.n_a, out.n_b, out.n_samples, out.seed
        )),
    }
}

fn load_script(spec: &str) -> Result<Script> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {spec}"))?)
    } else {
        Script::preset(spec).map_err(|_| anyhow!("`{spec}` is neither a script file nor a preset (dcgan, msggan, monotone)"))
    }
}

fn simulate(mut s: Settings, a: &SimulateArgs) -> Result<()> {
    s.set("scenario", a.scenario.as_ref());
    s.set("epochs", a.epochs);
    s.set("out", a.out.as_ref().map(|p| p.display()));
    s.set("noise_sigma", a.noise_sigma);
    s.set("script", a.script.as_ref());
    s.switch("images", a.images);
    s.set("image_side", a.image_side);
    s.set("train_images", a.train_images);
    s.set("test_images", a.test_images);
    s.set("snapshot_images", a.snapshot_images);
    s.set("train_modes", a.train_modes);
    s.set("image_noise", a.image_noise);
    s.set("eval_interval", a.eval_interval);
    s.overlay_shape(&a.shape);
    s.overlay_sampling(&a.sampling);

    let out = s
        .path("out")
        .or_else(|| s.path("output"))
        .ok_or_else(|| anyhow!("missing --out"))?;
    let seed = s.seed()?;
    let script: Option<String> = s.get("script")?;
    let kind: ScenarioKind = match s.get::<ScenarioKind>("scenario")? {
        Some(k) => k,
        None if script.is_some() => ScenarioKind::Scripted,
        None => bail!("missing --scenario"),
    };
    let bundle = if kind == ScenarioKind::Scripted {
        let spec = script.ok_or_else(|| anyhow!("scripted scenario needs --script"))?;
        scripted_run(&load_script(&spec)?, seed)?
    } else {
        let mut sc = Scenario::new(kind, s.get_or("epochs", 1000)?, seed);
        sc.noise_sigma = s.get_or("noise_sigma", sc.noise_sigma)?;
        sc.shape = s.shape()?;
        if s.flag("images")? {
            image_run(&sc, &s.image_run()?, &s.metrics()?)?
        } else {
            loss_run(&sc)?
        }
    };
    emit_run(&bundle, &out)?;
    Ok(())
}

fn report(mut s: Settings, a: &ReportArgs, format: Option<Format>) -> Result<()> {
    s.set("report", a.report.as_ref().map(|p| p.display()));
    let path: PathBuf = s.require("report")?;
    let r = RunReport::read(&path)?;
    match format {
        None => emit(&s, "report.txt", &r.render_text()),
        Some(Format::Csv) => emit(&s, "report.csv", &r.render_csv()?),
        Some(Format::Json) => print(&r.to_json()?),
    }
}
