use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsd-magic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!(
            "stderr is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_subcommands() {
    let out = qsd(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["unitary", "sweep", "random-state", "fit", "lindblad-check"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn sweep_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsd(&[
        "sweep",
        "--model",
        "xx",
        "--sites",
        "4",
        "--gammas",
        "0.01,0.1,1,10",
        "--t-max",
        "3",
        "--burn-in",
        "1",
        "--n-traj",
        "3",
        "-o",
        path(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["points"], 4);
    assert!(dir.path().join("sweep_xx.csv").exists());

    let refit = dir.path().join("refit.csv");
    let out = qsd(&[
        "fit",
        "-i",
        path(&dir.path().join("sweep_xx.csv")),
        "-o",
        path(&refit),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_json(&out)["fitted_sizes"], serde_json::json!([4]));
    assert_eq!(
        fs::read_to_string(&refit).unwrap(),
        fs::read_to_string(dir.path().join("fits_xx.csv")).unwrap()
    );
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "model = \"xxz\"\nsites = [4, 6]\nn_random = 5\nmaster_seed = 3\n",
    )
    .unwrap();
    let out = qsd(&[
        "random-state",
        "--config",
        path(&config),
        "--sites",
        "4",
        "-o",
        path(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let baselines = stdout_json(&out)["baselines"].as_array().unwrap().clone();
    assert_eq!(baselines.len(), 2);
    assert!(baselines
        .iter()
        .all(|b| b["sites"] == 4 && b["n_samples"] == 5));
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("random_states_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["master_seed"], 3);
}

#[test]
fn unitary_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsd(&[
        "unitary",
        "--sites",
        "4",
        "--t-max",
        "5",
        "--burn-in",
        "1",
        "--n-random",
        "4",
        "-o",
        path(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["summary"][0]["sites"], 4);
    assert!(dir.path().join("unitary_xxz_L4.csv").exists());
}

#[test]
fn lindblad_check_passes_at_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsd(&[
        "lindblad-check",
        "--sites",
        "4",
        "--gammas",
        "0",
        "--t-max",
        "1",
        "--burn-in",
        "0",
        "--n-traj",
        "2",
        "-o",
        path(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["status"], "pass");
    assert_eq!(summary["low_power"], true);
}

#[test]
fn invalid_size_is_a_json_error() {
    let out = qsd(&["sweep", "--sites", "5", "--gammas", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "invalid_argument");
    assert!(err["message"].as_str().unwrap().contains("got 5"));
}

#[test]
fn unknown_config_field_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "modle = \"xx\"\n").unwrap();
    let out = qsd(&["sweep", "--config", path(&config)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "config");
    assert!(err["causes"][0].as_str().unwrap().contains("modle"));
}

#[test]
fn missing_fit_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsd(&[
        "fit",
        "-i",
        path(&dir.path().join("absent.csv")),
        "-o",
        path(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert!(matches!(err["kind"].as_str(), Some("io" | "csv")), "{err}");
    assert!(err["message"].as_str().unwrap().contains("absent.csv"));
}
