use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn schednet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schednet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = schednet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, wsa: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"
algo = "schednet"
wsa = "{wsa}"
k = 1
l = 2
seeds = [1]
output_dir = "{out}"

[env]
kind = "pp"
max_steps = 30

[hyperparameters]
training_steps = 120
batch_size = 16
buffer_capacity = 200
eval_interval = 60
eval_episodes = 2
final_eval_episodes = 2
"#,
        out = dir.join("run").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_evaluate_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "top_k");
    let train = ok_json(&["train", "--config", s(&cfg)]);
    let snap = PathBuf::from(train["snapshots"][0].as_str().unwrap());
    assert!(snap.exists());
    assert!(train["mean_steps"].as_f64().unwrap() > 0.0);

    let eval = ok_json(&["evaluate", "--snapshot", s(&snap), "--episodes", "3", "--wsa", "top_k"]);
    assert_eq!(eval["episodes"], 3);

    let bad = schednet(&["evaluate", "--snapshot", s(&snap), "--episodes", "3", "--wsa", "round_robin"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("wsa"));

    let trace = dir.path().join("trace.jsonl");
    let summary = ok_json(&["trace-schedule", "--snapshot", s(&snap), "--steps", "25", "--out", s(&trace)]);
    assert_eq!(summary["steps"], 25);
    let counts: u64 = summary["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 25);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 26);

    let csma = ok_json(&["csma-sim", "--trace", s(&trace), "--k", "1"]);
    assert_eq!(csma["report"]["steps"], 25);

    let msgs = dir.path().join("msgs.jsonl");
    let log = ok_json(&["trace-messages", "--snapshot", s(&snap), "--steps", "10", "--out", s(&msgs)]);
    assert_eq!(log["records"], 10);
    let first: Value = serde_json::from_str(std::fs::read_to_string(&msgs).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["message"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_over_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "top_k");
    let out = dir.path().join("sweep");
    let summary = ok_json(&[
        "sweep", "--config", s(&cfg), "--param", "k", "--values", "1,2", "--out", s(&out), "--steps", "60",
    ]);
    assert_eq!(summary["entries"].as_array().unwrap().len(), 2);
    assert!(out.join("k1").join("summary.json").exists());
    assert!(out.join("k2").join("summary.json").exists());
    assert!(out.join("sweep_summary.json").exists());
}

#[test]
fn csma_inline_weights() {
    let topk = ok_json(&["csma-sim", "--weights", "0.9,0.5,0.2,0.1", "--trials", "100"]);
    assert_eq!(topk["success_rate"], 1.0);
    assert_eq!(topk["schedule_frequency"][0], 1.0);

    let ocsma = ok_json(&["csma-sim", "--mode", "ocsma", "--weights", "0,-0.5,0.5", "--duration", "1e5"]);
    assert!(ocsma["l1_to_stationary"].as_f64().unwrap() < 0.05);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = [1]\noutput_dir = \"x\"\nk = 9\n[env]\nkind = \"pp\"\n").unwrap();
    let out = schednet(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`k`"));

    let missing = schednet(&["evaluate", "--snapshot", s(&dir.path().join("none.bin"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!schednet(&["csma-sim"]).status.success());
}
