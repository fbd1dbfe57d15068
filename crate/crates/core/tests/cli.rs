use std::fs;
use std::process::Command;

use cail_core::harness::{serialize, ExperimentConfig};

fn cail() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cail"));
    c.env("RUST_LOG", "error");
    c
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seeds: vec![1, 2],
        total_trajectories: 60,
        ranking_fraction: 0.1,
        beta_snapshot_every: 10,
        ..ExperimentConfig::default()
    };
    cfg.train.total_steps = 20;
    cfg.train.batch_size = 64;
    cfg.train.hidden = [16, 16];
    cfg
}

#[test]
fn check_exits_zero() {
    let out = cail().arg("check").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "grid.rows = five\n").unwrap();
    let out = cail().arg("run").arg("--config").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let missing = cail().arg("run").arg("--config").arg(dir.path().join("nope.cfg")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn run_writes_outputs_and_summarize_rebuilds_them() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.cfg");
    fs::write(&path, serialize(&small_config())).unwrap();
    let out_dir = dir.path().join("out");
    let out = cail().arg("run").arg("--config").arg(&path).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run_1.csv", "run_2.csv", "summary.txt", "seed_1/beta_10.txt", "seed_2/beta_20.txt"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out_dir.join("run_1.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 21);
    let first = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let re = cail().arg("summarize").arg(&out_dir).output().unwrap();
    assert_eq!(re.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&re.stdout), first);
}

#[test]
fn summarize_empty_dir_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = cail().arg("summarize").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
