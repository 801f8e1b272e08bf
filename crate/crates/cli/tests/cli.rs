use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn deadcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deadcore")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["dead_core.toml", "poisson.toml", "oracles.toml", "comparison.toml", "empty.toml"] {
        let out = deadcore(&["validate", "--config", config(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", text(&out.stdout));
    }
}

#[test]
fn validate_lists_every_violation() {
    let out = deadcore(&["validate", "--config", config("invalid.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(text(&out.stdout).lines().count(), 2, "{}", text(&out.stdout));
}

#[test]
fn unreadable_config_is_its_own_exit_code() {
    let out = deadcore(&["validate", "--config", "/nonexistent/deadcore.toml"]);
    assert_eq!(out.status.code(), Some(4));
    let out = deadcore(&["run", "--config", "/nonexistent/deadcore.toml"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_refuses_an_invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = deadcore(&[
        "run",
        "--config",
        config("invalid.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn oracle_writes_checks_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = deadcore(&[
        "oracle",
        "--config",
        config("oracles.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("PASS counterexample/residual"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    for f in ["manifest.json", "summary.json", "counterexample_residual.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"), "{manifest}");
}

#[test]
fn empty_run_writes_only_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = deadcore(&["run", "--config", config("empty.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);
}

#[test]
fn solver_failure_prints_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fs::read_to_string(config("poisson.toml"))
        .unwrap()
        .replace("tol_residual = 2.5e-4", "tol_residual = 1e-12\nmax_sweeps = 3");
    let path = tmp.path().join("stalled.toml");
    fs::write(&path, cfg).unwrap();
    let dir = tmp.path().join("out");
    let out = deadcore(&["solve", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--grid", "16"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("total_sweeps"), "{stderr}");
    assert!(dir.join("solve_report.json").exists());
}
