// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_activecool"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{"master_seed": 5, "runs": 4, "jobs": 2,
    "model": {"spins": 2, "spectrum": {"n_regions": 3, "span_hi": 300}},
    "engine": {"cycles": 6}}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let f = dir.join(name);
    std::fs::write(&f, text).unwrap();
    f
}

#[test]
fn gen_run_ensemble_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);

    let model = dir.path().join("model.json");
    let out = bin(&["gen", "--config", p(&cfg), "--out", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["eigenvalues"].as_array().unwrap().len(), 6);

    let recs = dir.path().join("recs.jsonl");
    let out = bin(&["ensemble", "--config", p(&cfg), "--out", p(&recs)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["runs"], 4);
    let lines: Vec<Value> = std::fs::read_to_string(&recs)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["model_fingerprint"], doc["fingerprint"]);

    // `run --index` reproduces an ensemble record exactly.
    let one = dir.path().join("one.jsonl");
    let out = bin(&["run", "--config", p(&cfg), "--index", "2", "--out", p(&one)]);
    assert!(out.status.success());
    let rec: Value = serde_json::from_str(std::fs::read_to_string(&one).unwrap().trim()).unwrap();
    let orig = lines.iter().find(|r| r["run_index"] == 2).unwrap();
    assert_eq!(&rec, orig);

    let report = dir.path().join("report");
    let out = bin(&["analyze", "--in", p(&recs), "--bins", "3", "--out", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.txt", "bins.csv", "histogram.svg", "analysis.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn run_with_explicit_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert!(bin(&["run", "--config", p(&cfg), "--seed", "9", "--out", p(&a)]).status.success());
    assert!(bin(&["run", "--config", p(&cfg), "--seed", "9", "--out", p(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn oracle_reports_bin_test() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let model = dir.path().join("model.json");
    assert!(bin(&["gen", "--config", p(&cfg), "--out", p(&model)]).status.success());
    let out = bin(&["oracle", "--model", p(&model), "--beta", "0.01", "--n", "5000", "--bins", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["counts"].as_array().unwrap().len(), 3);
    let total: u64 = r["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(total, 5000);
    let exact = r["mean_energy_exact"].as_f64().unwrap();
    let sample = r["mean_energy_sample"].as_f64().unwrap();
    let se = r["energy_sd_exact"].as_f64().unwrap() / (5000f64).sqrt();
    assert!((exact - sample).abs() < 5.0 * se);

    let neg = bin(&["oracle", "--model", p(&model), "--beta", "-0.01", "--n", "100"]);
    assert!(neg.status.success());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("m.json");
    let cases = [
        r#"{"master_seed": 1, "engine": {"fields": {"lo": -1}}}"#,
        r#"{"master_seed": 1, "bogus": true}"#,
        r#"{"runs": 3}"#,
        "not json",
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{k}.json"), text);
        let out = bin(&["gen", "--config", p(&cfg), "--out", p(&out_path)]);
        assert_eq!(out.status.code(), Some(2), "case {k}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let err = String::from_utf8_lossy(
        &bin(&["gen", "--config", p(&dir.path().join("bad0.json")), "--out", p(&out_path)]).stderr,
    )
    .to_string();
    assert!(err.contains("engine.fields.lo"), "{err}");
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    // A lattice with no transverse field commutes with every local coupling.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"master_seed": 1, "model": {"kind": "lattice", "sites": 4, "g": 0.0}, "engine": {"cycles": 3}}"#,
    );
    let out = bin(&["run", "--config", p(&cfg), "--seed", "1", "--out", p(&dir.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_is_not_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "analyze",
        "--in",
        p(&dir.path().join("nope.jsonl")),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
