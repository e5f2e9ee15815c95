use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fragsim"));
    c.env_remove("FRAGSIM_THREADS");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

const SMALL_THEOREM1: &str = r#"{
  "experiment": "theorem1",
  "seed": 3,
  "alpha": -0.5,
  "dislocation": "brownian",
  "immigration": "brownian",
  "m_grid": [10, 100],
  "probes": [0.5, 1.0],
  "n": 60,
  "threshold": 1.0
}"#;

#[test]
fn theorem1_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t1.json", SMALL_THEOREM1);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &["--dump-raw", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.json",
        "manifest.json",
        "comparisons.csv",
        "laplace.csv",
        "cells.csv",
        "verdicts.csv",
        "raw_samples.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    assert_eq!(report["comparisons"].as_array().unwrap().len(), 8);
    let csv = fs::read_to_string(out.join("comparisons.csv")).unwrap();
    assert!(csv.starts_with("series,param,t,ks,ks_se,p_value,n_sim,n_ref,scored\n"));
    assert_eq!(csv.lines().count(), 9);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let raw = fs::read_to_string(out.join("raw_samples.jsonl")).unwrap();
    assert!(raw.lines().count() >= 8);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t1.json", SMALL_THEOREM1);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--threads", "2"]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    // same config into the same directory is allowed
    assert_eq!(run(&cfg, &a, &[]).status.code(), Some(0));
}

#[test]
fn refuses_to_overwrite_other_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t1.json", SMALL_THEOREM1);
    let out = tmp.path().join("out");
    assert_eq!(run(&cfg, &out, &[]).status.code(), Some(0));
    let before = fs::read(out.join("report.json")).unwrap();
    let o = run(&cfg, &out, &["--seed", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("refusing to overwrite"));
    assert_eq!(fs::read(out.join("report.json")).unwrap(), before);
}

#[test]
fn negative_sample_size_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &SMALL_THEOREM1.replace("\"n\": 60", "\"n\": -5"));
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field `n`"));
    assert!(!out.exists());
}

#[test]
fn unknown_field_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &SMALL_THEOREM1.replace("\"seed\": 3", "\"sead\": 3"));
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sead") && err.contains("line 3"), "{err}");
}

#[test]
fn unresolvable_measure_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &SMALL_THEOREM1.replace("\"dislocation\": \"brownian\"", "\"dislocation\": \"nope\""));
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field `dislocation`"));
}

#[test]
fn zero_immigration_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &SMALL_THEOREM1.replace("\"immigration\": \"brownian\"", "\"immigration\": \"zero\""));
    assert_eq!(run(&cfg, &tmp.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "strict.json", &SMALL_THEOREM1.replace("\"threshold\": 1.0", "\"threshold\": 1e-9"));
    let out = tmp.path().join("out");
    assert_eq!(run(&cfg, &out, &[]).status.code(), Some(1));
    assert!(out.join("report.json").exists());
}

#[test]
fn runtime_failure_exits_three() {
    // the rate s^-400 overflows for every fragment lighter than 1
    let body = SMALL_THEOREM1
        .replace("\"m_grid\": [10, 100]", "\"m_grid\": [0.5]")
        .replace("\"alpha\": -0.5", "\"alpha\": -400.0");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rt.json", &body);
    let o = run(&cfg, &tmp.path().join("out"), &["--threads", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validate_samplers_runs_the_sampler_suite_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.json",
        r#"{"experiment": "validate_samplers", "seed": 5, "n": 2000, "cases": 200}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["comparisons"].as_array().unwrap().is_empty());
    assert!(report["checks"].as_array().unwrap().len() >= 10);
}

#[test]
fn missing_output_directory_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t1.json", SMALL_THEOREM1);
    let o = bin().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
