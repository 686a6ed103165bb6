use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sivi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sivi"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn data(file: &str) -> String {
    format!("{}/data/{file}", env!("CARGO_MANIFEST_DIR"))
}

fn validate(path: &Path) -> (bool, Value) {
    let out = sivi(&["validate", "--config", path.to_str().unwrap()]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    (out.status.success(), json)
}

fn issue_paths(json: &Value) -> Vec<String> {
    json["issues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["path"].as_str().unwrap().to_string())
        .collect()
}

const SMALL_TOY: &str = r#"{
  "schema_version": 1,
  "experiment": "toy",
  "model": { "target": "laplace" },
  "sivi": { "iterations": 60, "j": 10, "draws": 300, "hidden": [8], "noise_dim": 3 }
}"#;

#[test]
fn minimal_toy_config_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "toy.json",
        r#"{"experiment": "toy", "model": {"target": "bimodal"}}"#,
    );
    let (ok, json) = validate(&cfg);
    assert!(ok);
    assert_eq!(json["ok"], true);
}

#[test]
fn negative_k_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "toy", "model": {"target": "laplace"},
            "sivi": {"k_schedule": {"kind": "constant", "k": -1}}}"#,
    );
    let (ok, json) = validate(&cfg);
    assert!(!ok);
    assert_eq!(issue_paths(&json), vec!["sivi.k_schedule.k"]);
}

#[test]
fn logistic_without_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lr.json", r#"{"experiment": "logistic"}"#);
    let (ok, json) = validate(&cfg);
    assert!(!ok);
    assert!(issue_paths(&json).contains(&"dataset".to_string()));
}

#[test]
fn schema_violations_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.json",
        "{\n  \"experiment\": \"toy\",\n  \"sivi\": { \"iteratons\": 5 }\n}\n",
    );
    let (ok, json) = validate(&cfg);
    assert!(!ok);
    assert_eq!(json["issues"][0]["line"], 3);
    let missing = write_config(
        dir.path(),
        "missing.json",
        r#"{"experiment": "nb", "dataset": "nope.txt"}"#,
    );
    let (ok, json) = validate(&missing);
    assert!(!ok);
    assert_eq!(issue_paths(&json), vec!["dataset"]);
}

#[test]
fn toy_run_writes_report_and_full_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.json", SMALL_TOY);
    let out = dir.path().join("run");
    let res = sivi(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trace"]["len"], 60);
    let ks = report["ks"].as_array().unwrap();
    assert_eq!(ks.len(), 1);
    assert_eq!(ks[0]["method"], "sivi");
    assert_eq!(ks[0]["reference"], "target");

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
    let draws = std::fs::read_to_string(out.join("draws_sivi.csv")).unwrap();
    assert_eq!(draws.lines().next(), Some("z"));
    assert_eq!(draws.lines().count(), 301);
    assert!(out.join("hist_sivi_z.csv").is_file());
    for f in report["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).is_file(), "{f}");
    }
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.json", SMALL_TOY);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let res = sivi(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
        out
    };
    let (a, b, c) = (run("a", "7"), run("b", "7"), run("c", "8"));
    for f in [
        "draws_sivi.csv",
        "draws_target.csv",
        "trace.csv",
        "report.json",
        "posterior.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        std::fs::read(a.join("draws_sivi.csv")).unwrap(),
        std::fs::read(c.join("draws_sivi.csv")).unwrap()
    );
}

#[test]
fn nb_run_reports_four_ks_entries() {
    let dir = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "nb", "dataset": "{}",
            "sivi": {{"iterations": 30, "k_schedule": {{"kind": "constant", "k": 10}}, "hidden": [8], "draws": 200}},
            "baselines": {{"gibbs_burn_in": 100, "gibbs_draws": 200, "gibbs_thin": 2}}}}"#,
        data("red_mites.txt")
    );
    let cfg = write_config(dir.path(), "nb.json", &json);
    let out = dir.path().join("run");
    let res = sivi(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let cells: Vec<(String, String)> = report["ks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| {
            (
                k["method"].as_str().unwrap().into(),
                k["variable"].as_str().unwrap().into(),
            )
        })
        .collect();
    let want = [
        ("sivi", "r"),
        ("sivi", "p"),
        ("mfvi_diag", "r"),
        ("mfvi_diag", "p"),
    ];
    assert_eq!(cells, want.map(|(a, b)| (a.to_string(), b.to_string())));
    let header = std::fs::read_to_string(out.join("draws_gibbs.csv")).unwrap();
    assert_eq!(header.lines().next(), Some("r,p"));

    let res = sivi(&[
        "draws",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--count",
        "25",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let posthoc = std::fs::read_to_string(out.join("draws_posthoc_seed3.csv")).unwrap();
    assert_eq!(posthoc.lines().count(), 26);
}

#[test]
fn logistic_run_has_predictive_table_and_beta_headers() {
    let dir = tempfile::tempdir().unwrap();
    let json = format!(
        r#"{{"experiment": "logistic", "dataset": "{}", "test_rows": 5,
            "sivi": {{"iterations": 20, "k_schedule": {{"kind": "constant", "k": 5}}, "hidden": [8], "noise_dim": 4, "draws": 100}},
            "baselines": {{"mfvi_full": true, "gibbs_burn_in": 50, "gibbs_draws": 100, "gibbs_thin": 1}}}}"#,
        data("nodal_synthetic.csv")
    );
    let cfg = write_config(dir.path(), "lr.json", &json);
    let out = dir.path().join("run");
    let res = sivi(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let methods: Vec<&str> = report["predictive"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, vec!["sivi", "mfvi_diag", "mfvi_full", "gibbs"]);
    assert_eq!(
        report["predictive"][0]["row_sds"].as_array().unwrap().len(),
        5
    );
    let header = std::fs::read_to_string(out.join("draws_sivi.csv")).unwrap();
    assert_eq!(
        header.lines().next(),
        Some("beta_0,beta_1,beta_2,beta_3,beta_4,beta_5")
    );
}

#[test]
fn nan_abort_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nan.json",
        r#"{"experiment": "toy", "model": {"target": "laplace"}, "sivi": {"iterations": 50, "phi_lr": 1e300}}"#,
    );
    let out = dir.path().join("run");
    let res = sivi(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("NaN"));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
}
