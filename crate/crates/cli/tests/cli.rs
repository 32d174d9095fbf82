use serde_json::Value;
use std::process::{Command, Output};

fn opf_sense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opf-sense")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn cost_mode_keeps_the_builtin_parse_options() {
    let out = opf_sense(&["parse", "--case", "case39", "--cost-mode", "reject"]);
    let net = stdout_json(&out);
    assert_eq!(net["buses"].as_array().unwrap().len(), 39);
}

#[test]
fn opf_reports_small_residuals() {
    let v = stdout_json(&opf_sense(&["opf", "--case", "case5_toy"]));
    assert_eq!(v["status"], "optimal");
    assert_eq!(v["pg"].as_array().unwrap().len(), 2);
    for key in ["stationarity", "feasibility", "complementarity"] {
        assert!(v["kkt"][key].as_f64().unwrap() < 1e-8, "{key}");
    }
}

#[test]
fn sense_prints_one_jacobian_row_per_output() {
    let v = stdout_json(&opf_sense(&["sense", "--case", "case3_twogen", "--scale", "1.05"]));
    let rows = v["jacobian"].as_array().unwrap();
    assert_eq!(rows.len(), v["output_labels"].as_array().unwrap().len());
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == v["param_labels"].as_array().unwrap().len()));
}

#[test]
fn errors_are_reported_as_json() {
    let out = opf_sense(&["opf", "--case", "no/such/case.m"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn dataset_info_counts_samples() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let gen = opf_sense(&["dataset", "generate", "--case", "case5_toy", "--n", "6", "--seed", "2", "--out", data.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let info = stdout_json(&opf_sense(&["dataset", "info", "--data", data.to_str().unwrap()]));
    assert_eq!(info["samples"], 6);
    let counted: u64 = ["labeled", "value_only", "infeasible", "failed"].iter().map(|k| info[k].as_u64().unwrap()).sum();
    assert_eq!(counted, 6);
}
