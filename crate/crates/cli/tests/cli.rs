use std::fs;
use std::process::{Command, Output};

use blockpos::harness::{ExperimentConfig, SCHEMA_VERSION};
use blockpos::recovery::{Program, SolverConfig};
use blockpos::thresholds::{weak_beta, ThresholdVariant};
use serde_json::Value;

fn blockpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockpos"))
        .args(args)
        .env_remove("BLOCKPOS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "small".into(),
        n: 12,
        d: 2,
        m_values: vec![6, 9],
        k_values_per_m: [(6, vec![1, 2, 3, 4]), (9, vec![2, 4, 6])].into_iter().collect(),
        trials: 8,
        program: Program::L2L1Pos,
        positive: true,
        master_seed: 1,
        solver: SolverConfig::default(),
        n_overrides: Default::default(),
        notes: Vec::new(),
    }
}

#[test]
fn asymptotic_alpha_for_half() {
    let v = json_stdout(&blockpos(&["threshold", "--beta", "0.5", "--variant", "asymptotic"]));
    assert_eq!(v["alpha_min"].as_f64().unwrap(), 0.625);
}

#[test]
fn l1_threshold_at_full_sampling() {
    let v = json_stdout(&blockpos(&["threshold", "--alpha", "1.0", "--d", "1", "--variant", "l1"]));
    assert!((v["beta_w"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
}

#[test]
fn positive_variant_dominates() {
    let pos = json_stdout(&blockpos(&["threshold", "--alpha", "0.5", "--d", "15", "--variant", "block-pos"]));
    let signed = json_stdout(&blockpos(&["threshold", "--alpha", "0.5", "--d", "15", "--variant", "block"]));
    assert!(pos["beta_w"].as_f64().unwrap() > signed["beta_w"].as_f64().unwrap());
}

#[test]
fn threshold_output_equals_library_value() {
    let v = json_stdout(&blockpos(&["threshold", "--alpha", "0.37", "--d", "4", "--variant", "block"]));
    let lib = weak_beta(0.37, 4, ThresholdVariant::BlockL2L1).unwrap();
    assert_eq!(v["beta_w"].as_f64().unwrap(), lib);
    let v = json_stdout(&blockpos(&["threshold", "--alpha", "0.37", "--d", "4", "--variant", "block", "--positive"]));
    let lib = weak_beta(0.37, 4, ThresholdVariant::BlockL2L1Positive).unwrap();
    assert_eq!(v["beta_w"].as_f64().unwrap(), lib);
}

#[test]
fn resolved_config_goes_to_stderr() {
    let out = blockpos(&["threshold", "--alpha", "0.5", "--d", "2"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config:") && err.contains("\"d\":2"));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["threshold", "--alpha", "0.5", "--beta", "0.1"][..],
        &["threshold", "--d", "3"],
        &["threshold", "--alpha", "0.5", "--bogus"],
        &["threshold", "--alpha", "1.5"],
        &["threshold", "--alpha", "0.5", "--variant", "nope"],
        &["phase", "--preset", "huge"],
        &["frobnicate"],
    ] {
        assert_eq!(blockpos(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bad_config_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, "{\"schema_version\": 1}").unwrap();
    assert_eq!(blockpos(&["phase", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    let mut cfg = small_config();
    cfg.schema_version = 99;
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(blockpos(&["phase", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn curve_csv_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = blockpos(&["curve", "--d", "3", "--variant", "block", "--points", "5", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "variant,d,alpha,beta_w,theta_hat,residual");
    assert_eq!(lines.count(), 5);
}

#[test]
fn width_json_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_blockpos"))
        .args(["width", "--n", "100", "--beta", "0.1", "--d", "3", "--trials", "10", "--seed", "5"])
        .env("BLOCKPOS_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("width-n100-d3.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    for key in ["n", "d", "beta", "trials", "seed", "empirical_mean", "empirical_stderr", "analytic_limit"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let lib = blockpos::width::empirical_width(100, 0.1, 3, 10, 5).unwrap();
    assert_eq!(v["empirical_mean"].as_f64().unwrap(), lib.empirical_mean);
}

#[test]
fn certify_reports_margin() {
    let v = json_stdout(&blockpos(&["certify", "--n", "10", "--m", "10", "--k", "3", "--d", "2", "--positive"]));
    assert_eq!(v["certificate"]["holds"], Value::Bool(true));
    assert_eq!(v["certificate"]["margin"].as_f64().unwrap(), 0.0);
    assert_eq!(v["instance"]["seed"].as_u64().unwrap(), 0);
}

#[test]
fn phase_output_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&small_config()).unwrap()).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2", "3"].into_iter().enumerate() {
        let path = dir.path().join(format!("p{i}.json"));
        let out = blockpos(&["--threads", threads, "phase", "--config", cfg, "--seed", "7", "--out", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(&path).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let v: Value = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(v["config"]["master_seed"].as_u64().unwrap(), 7);
}

#[test]
fn phase_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    fs::write(&cfg_path, serde_json::to_string(&small_config()).unwrap()).unwrap();
    let path = dir.path().join("p.csv");
    let out = blockpos(&["phase", "--config", cfg_path.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("m,k,alpha,beta,successes,trials,success_rate,flag\n"));
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn desk_preset_svg_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.svg");
    let out = blockpos(&["phase", "--preset", "desk", "--seed", "7", "--format", "svg", "--out", path.to_str().unwrap()]);
    let summary = json_stdout(&out);
    assert!(summary["max_abs_deviation"].as_f64().unwrap() <= 0.05);
    let svg = fs::read_to_string(&path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("<g id=\"heatmap\">").count(), 1);
}
