//! Exit codes, report envelopes and reproducibility of the `effbound` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn effbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effbound"))
        .args(args)
        .output()
        .unwrap()
}

fn tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("effbound-cli-{}-{name}", std::process::id()))
}

#[test]
fn gamma_bound_report() {
    let out = effbound(&[
        "compute-bound",
        "--model",
        "levy-gamma",
        "--alpha",
        "0.3",
        "--delta",
        "1",
        "--t",
        "1.0",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["schema"], "effbound/1");
    assert_eq!(doc["config"]["model"]["alpha"], 0.3);
    let bound = &doc["result"]["bound"];
    assert!(bound["sigma"][0][0].as_f64().unwrap() > 0.0);
    let beta = bound["diagnostics"]["beta_hat"].as_f64().unwrap();
    assert!((beta - 0.3).abs() < 0.02, "β̂ = {beta}");
}

#[test]
fn zero_threshold_is_a_usage_error() {
    let out = effbound(&["compute-bound", "--model", "levy-gamma", "--t", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flags_and_keys_are_usage_errors() {
    assert_eq!(
        effbound(&["compute-bound", "--bogus"]).status.code(),
        Some(1)
    );
    let cfg = tmp("bad.toml");
    std::fs::write(&cfg, "t = [1.0]\ncolour = \"blue\"\n").unwrap();
    let out = effbound(&["compute-bound", "--config", cfg.to_str().unwrap()]);
    let _ = std::fs::remove_file(&cfg);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_matches_flags() {
    let cfg = tmp("ok.toml");
    std::fs::write(
        &cfg,
        "t = [1.0]\n\n[model]\nmodel = \"levy-gamma\"\nalpha = 0.3\n",
    )
    .unwrap();
    let a = effbound(&["compute-bound", "--config", cfg.to_str().unwrap()]);
    let _ = std::fs::remove_file(&cfg);
    let b = effbound(&[
        "compute-bound",
        "--model",
        "levy-gamma",
        "--alpha",
        "0.3",
        "--t",
        "1.0",
    ]);
    assert_eq!(a.status.code(), Some(0));
    let (da, db): (serde_json::Value, serde_json::Value) = (
        serde_json::from_slice(&a.stdout).unwrap(),
        serde_json::from_slice(&b.stdout).unwrap(),
    );
    assert_eq!(da["result"], db["result"]);
    assert_eq!(da["config"]["model"], db["config"]["model"]);
}

#[test]
fn empty_basis_ladder_is_a_usage_error() {
    let out = effbound(&["oracle", "--t", "1.5", "--dims", ""]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_on_compound_poisson_model() {
    let out = effbound(&[
        "oracle",
        "--model",
        "levy-cp-normal",
        "--t",
        "1.5",
        "--side",
        "left",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["result"]["oracle"]["final_ratio"].as_f64().unwrap() >= 0.98);
}

#[test]
fn simulation_is_reproducible() {
    let (a, b) = (tmp("a.json"), tmp("b.json"));
    for p in [&a, &b] {
        let out = effbound(&[
            "simulate",
            "--model",
            "decon-gamma-error",
            "--t",
            "0.5",
            "--n",
            "2000",
            "--reps",
            "20",
            "--seed",
            "42",
            "--tolerance",
            "1",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let _ = (std::fs::remove_file(&a), std::fs::remove_file(&b));
    assert_eq!(ta, tb);
}

#[test]
fn simulation_csv_has_one_row_per_replication() {
    let out = effbound(&[
        "simulate",
        "--model",
        "decon-gamma-error",
        "--t",
        "0.5",
        "--t",
        "1.5",
        "--n",
        "500",
        "--reps",
        "3",
        "--tolerance",
        "100",
        "--format",
        "csv",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rep,estimate_1,estimate_2");
    assert_eq!(lines.len(), 4);
}

#[test]
fn white_noise_demo_passes() {
    let out = effbound(&["white-noise-demo", "--reps", "10000"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn list_models_names_every_model() {
    let out = effbound(&["list-models"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = doc["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"levy-gamma") && names.contains(&"wn-diffeq"));
}
