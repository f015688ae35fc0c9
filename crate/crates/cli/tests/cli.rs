use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const LARM: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/musashi_larm.json");
const RIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/handle_rig.json");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_myoarm"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn param(csv: &str, name: &str) -> f64 {
    csv.lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .and_then(|rest| rest.split(',').next())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["validate", LARM]).status.code(), Some(0));

    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(LARM).unwrap()).unwrap();
    doc["circuit"]["control_boards"][0]["driver_count"] = 4.into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = run(dir.path(), &["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("limit 3"));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"links\": [").unwrap();
    assert_eq!(run(dir.path(), &["validate", broken.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn generated_logs_identify_back() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.csv");
    let report = dir.path().join("identify.csv");

    assert!(run(dir.path(), &["gen-log", "--unit", "grommet"]).status.success());
    assert!(run(dir.path(), &["identify", log.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("param,value,stderr"));
    assert!((param(&text, "a_m") - 3.32).abs() < 1e-6);
    assert!((param(&text, "b_m") - 0.14).abs() < 1e-8);

    assert!(run(dir.path(), &["gen-log", "--model", "dyneema", "--range", "0,2"]).status.success());
    assert!(run(dir.path(), &["identify", log.to_str().unwrap(), "--form", "dyneema"]).status.success());
    let a_d = param(&fs::read_to_string(&report).unwrap(), "a_d");
    assert!((a_d - 2.8e4).abs() < 1e-3, "{a_d}");
}

#[test]
fn degenerate_log_is_an_error() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("two.csv");
    fs::write(&log, "l_abs_mm,dl_mm,T_N\n480,1,5\n480,1,6\n").unwrap();
    let out = run(dir.path(), &["identify", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("identify.csv").exists());
}

#[test]
fn noisy_log_needs_a_seed() {
    let dir = TempDir::new().unwrap();
    assert!(!run(dir.path(), &["gen-log", "--noise-sd", "1"]).status.success());
    assert!(run(dir.path(), &["gen-log", "--noise-sd", "1", "--seed", "4"]).status.success());
}

#[test]
fn handle_experiment_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = run(d.path(), &["exp-handle", "--seed", "5", "--epochs", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["metrics.csv", "trace.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().last().unwrap().starts_with("final/first,"));

    let one = TempDir::new().unwrap();
    assert!(run(one.path(), &["exp-handle", "--seed", "5", "--epochs", "1"]).status.success());
    assert_eq!(fs::read_to_string(one.path().join("metrics.csv")).unwrap().lines().count(), 2);

    let none = TempDir::new().unwrap();
    assert!(!run(none.path(), &["exp-handle", "--epochs", "1"]).status.success());
}

#[test]
fn equilibrium_at_hold_pose() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["sim-eq", RIG, "--hold-deg=-30,-60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').take(3).map(|v| v.parse().unwrap()).collect();
    assert!((row[1] + 30.0).abs() < 1e-3 && (row[2] + 60.0).abs() < 1e-3, "{row:?}");

    let bad = run(dir.path(), &["sim-eq", RIG, "--winds", "1,2"]);
    assert_eq!(bad.status.code(), Some(1));
}
