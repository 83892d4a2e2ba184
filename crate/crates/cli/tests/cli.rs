use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run_into(dir: &Path, scenario: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--scenario", scenario, "--out", out];
    args.extend_from_slice(extra);
    vab(&args)
}

fn verdicts(v: &Value) -> &serde_json::Map<String, Value> {
    v["verdicts"].as_object().expect("verdict map")
}

#[test]
fn clean_run_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "fig4_reconfig", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["trace.jsonl", "messages.jsonl", "metrics.json", "verdicts.json", "premise.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn check_reproduces_run_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path(), "fig4_reconfig", &[])), 0);
    let trace = dir.path().join("trace.jsonl");
    let premise = dir.path().join("premise.json");
    let o = vab(&[
        "check",
        "--trace",
        trace.to_str().unwrap(),
        "--premise",
        premise.to_str().unwrap(),
        "--mode",
        "spo",
        "--json",
    ]);
    assert_eq!(code(&o), 0);
    let offline: Value = serde_json::from_slice(&o.stdout).unwrap();
    let online: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verdicts.json")).unwrap()).unwrap();
    assert!(verdicts(&offline).len() >= 10);
    for (id, v) in verdicts(&offline) {
        assert_eq!(Some(v), verdicts(&online).get(id), "{id}");
    }
}

#[test]
fn check_infers_speculative_mode() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "steady_latency", &["--mode", "spo"]);
    let o = vab(&["check", "--trace", dir.path().join("trace.jsonl").to_str().unwrap(), "--json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(verdicts(&v).contains_key("P10a"));
}

#[test]
fn swapped_deliveries_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let lines = [
        r#"{"idx":1,"proc":1,"t":0,"action":"introduction","config":{"epoch":0,"members":[1,2],"leader":1}}"#,
        r#"{"idx":2,"proc":1,"t":0,"action":"conf_changed","config":{"epoch":0,"members":[1,2],"leader":1},"spec":null}"#,
        r#"{"idx":3,"proc":2,"t":0,"action":"conf_changed","config":{"epoch":0,"members":[1,2],"leader":1},"spec":null}"#,
        r#"{"idx":4,"proc":1,"t":1,"action":"broadcast","msg":{"origin":1,"seq":0,"payload":"a"}}"#,
        r#"{"idx":5,"proc":1,"t":1,"action":"broadcast","msg":{"origin":1,"seq":1,"payload":"b"}}"#,
        r#"{"idx":6,"proc":1,"t":2,"action":"deliver","msg":{"origin":1,"seq":0,"payload":"a"}}"#,
        r#"{"idx":7,"proc":1,"t":2,"action":"deliver","msg":{"origin":1,"seq":1,"payload":"b"}}"#,
        r#"{"idx":8,"proc":2,"t":2,"action":"deliver","msg":{"origin":1,"seq":1,"payload":"b"}}"#,
        r#"{"idx":9,"proc":2,"t":2,"action":"deliver","msg":{"origin":1,"seq":0,"payload":"a"}}"#,
    ];
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = vab(&["check", "--trace", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("P3-TotalOrder"));
}

#[test]
fn empty_trace_is_clean_with_liveness_unevaluated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let o = vab(&["check", "--trace", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("P5 ") && l.contains("NOT-EVALUATED")), "{text}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&vab(&["run"])), 2);
    assert_eq!(code(&vab(&["run", "--scenario", "no-such-scenario"])), 2);
    assert_eq!(code(&vab(&["check", "--trace", "/nonexistent/trace.jsonl"])), 2);
    assert_eq!(code(&vab(&["fuzz", "--mutant", "bogus"])), 2);
    assert_eq!(code(&vab(&["frobnicate"])), 2);
}

#[test]
fn malformed_trace_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"idx\":1}\n").unwrap();
    assert_eq!(code(&vab(&["check", "--trace", path.to_str().unwrap()])), 2);
}

#[test]
fn empty_campaign_exits_zero() {
    let o = vab(&["fuzz", "--seeds", "0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 runs, 0 with violations"));
}

#[test]
fn mutant_campaign_exits_one() {
    let o = vab(&["fuzz", "--seeds", "40", "--mode", "spo", "--mutant", "skip-probing"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("by property:"));
}

#[test]
fn anomaly_run_exits_one_and_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path(), "stale_read_anomaly", &[])), 1);
    let trace = dir.path().join("trace.jsonl");
    let o = vab(&["check", "--trace", trace.to_str().unwrap(), "--machine", "counter"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Linearizability"));
}

#[test]
fn metrics_prints_latency() {
    let o = vab(&["metrics", "--scenario", "steady_latency"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["steady_latency"], 2);
}
