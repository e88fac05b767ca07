#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gan_sentinel::RunReport;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gan-sentinel"))
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// `simulate` into `dir`, panicking on failure.
pub fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate".to_string(), "--out".into(), p(dir)];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = run(&args);
    assert_eq!(code(&out), 0, "simulate {extra:?}: {}", stderr(&out));
}

/// `monitor` over a simulated run directory, writing into `out`.
pub fn monitor(run_dir: &Path, out: &Path, extra: &[&str]) -> (i32, RunReport) {
    let mut args = vec![
        "monitor".to_string(),
        "--loss-log".into(),
        p(&run_dir.join("loss.jsonl")),
        "--output".into(),
        p(out),
    ];
    if run_dir.join("snapshots").is_dir() {
        args.extend(["--snapshots-dir".into(), p(&run_dir.join("snapshots"))]);
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let o = run(&args);
    let c = code(&o);
    assert!(c != 2, "monitor failed: {}", stderr(&o));
    (c, RunReport::read(&out.join("report.json")).expect("report written"))
}

pub fn scripted(dir: &Path, preset: &str) -> PathBuf {
    let run_dir = dir.join(preset);
    simulate(&run_dir, &["--script", preset]);
    run_dir
}

pub fn with_thresholds(run_dir: &Path) -> [String; 2] {
    ["--thresholds".into(), p(&run_dir.join("thresholds.json"))]
}
