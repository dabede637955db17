//! End-to-end tests of the command-line binary: exit codes, stdout report
//! content, artifact emission, and byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parisian"))
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn parisian binary")
}

/// Reference parameters with a small grid and a cheap simulation so the full
/// pipeline finishes quickly.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "market": { "lambda": 1.0, "c": 1.2, "theta": 0.5, "eta": 0.1, "rho": 1.0, "beta": 0.1 },
        "severity": { "kind": "exponential", "rate": 1.0 },
        "grid": { "x_min": -16.0, "x_max": 16.0, "n_x": 321, "n_atoms": 40 },
        "simulation": { "x0": 1.0, "n_paths": 2000, "seed": 7, "x_points": [1.0] }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn validate_reports_kappa_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&cfg, dir.path(), &["validate"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let kappa_line = stdout
        .lines()
        .find(|l| l.starts_with("kappa = "))
        .expect("kappa line in validate output");
    let kappa: f64 = kappa_line["kappa = ".len()..].parse().unwrap();
    assert!((kappa - 0.4).abs() < 1e-12, "kappa = {kappa}");
    assert!(dir.path().join("validate_metadata.json").is_file());
}

#[test]
fn validate_rejects_net_profit_violation_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    fs::write(
        &cfg_path,
        serde_json::json!({
            "market": { "lambda": 1.0, "c": 0.9, "theta": 0.5, "eta": 0.1, "rho": 1.0, "beta": 0.1 }
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&cfg_path, dir.path(), &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let payload: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("JSON error payload");
    assert_eq!(payload["error"]["code"], 1);
    let message = payload["error"]["message"].as_str().unwrap();
    assert!(
        message.contains("net profit"),
        "expected the net-profit violation to be named, got: {message}"
    );
}

#[test]
fn report_pipeline_emits_decay_coefficients_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&cfg, dir.path(), &["report"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let g2_tilde = report["gamma2_tilde"].as_f64().unwrap();
    let g2 = report["gamma2"].as_f64().unwrap();
    assert!((g2_tilde - 0.953565).abs() < 1e-5, "gamma2_tilde = {g2_tilde}");
    assert!((g2 - 1.403247).abs() < 1e-5, "gamma2 = {g2}");

    for artifact in [
        "diffusion.csv",
        "adjustment.csv",
        "hjb_solution.csv",
        "hjb_policy.csv",
        "report_simulation.csv",
        "report.json",
    ] {
        assert!(
            dir.path().join(artifact).is_file(),
            "missing artifact {artifact}"
        );
    }
}

#[test]
fn simulate_is_byte_reproducible_for_fixed_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = small_config(dir_a.path());
    for dir in [dir_a.path(), dir_b.path()] {
        let out = run(
            &cfg,
            dir,
            &["simulate", "--policy", "full-retention", "--paths", "5000"],
        );
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir_a.path().join("simulate.csv")).unwrap();
    let b = fs::read(dir_b.path().join("simulate.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "simulate.csv differs between identical runs");
}
