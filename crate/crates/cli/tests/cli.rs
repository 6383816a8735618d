use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn locomem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locomem")).current_dir(dir).args(args).output().expect("spawn locomem")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn decisions(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["record"] == "decision")
        .collect()
}

fn synth(dir: &Path, seed: &str, n: &str) {
    ok(&locomem(dir, &["synth", "--seed", seed, "--n", n, "--out", "data.jsonl"]));
    assert!(dir.join("data.oracle.json").exists());
}

#[test]
fn no_mem_run_never_refines() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "42", "10");
    ok(&locomem(dir.path(), &["run", "--dataset", "data.jsonl", "--condition", "NoMem", "--out", "log.jsonl"]));
    let ds = decisions(&dir.path().join("log.jsonl"));
    assert_eq!(ds.len(), 10);
    assert!(ds.iter().all(|d| d["refined"] == false));
}

#[test]
fn repeated_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "9", "60");
    for out in ["a.jsonl", "b.jsonl"] {
        ok(&locomem(dir.path(), &["run", "--dataset", "data.jsonl", "--condition", "STMplusLTM", "--out", out]));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablate_orders_conditions() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3", "500");
    ok(&locomem(dir.path(), &["ablate", "--dataset", "data.jsonl", "--out", "abl"]));
    for f in ["NoMem.jsonl", "STMOnly.jsonl", "STMplusLTM.jsonl", "report.txt", "report.json"] {
        assert!(dir.path().join("abl").join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("abl/report.json")).unwrap()).unwrap();
    let f1: Vec<f64> = report["reports"].as_array().unwrap().iter().map(|r| r["prf"]["f1"].as_f64().unwrap()).collect();
    assert_eq!(f1.len(), 3);
    assert!(f1[0] < f1[1] && f1[1] < f1[2], "{f1:?}");
}

#[test]
fn report_writes_tables_per_command_type() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "5", "80");
    ok(&locomem(dir.path(), &["run", "--dataset", "data.jsonl", "--condition", "STMOnly", "--out", "log.jsonl"]));
    ok(&locomem(dir.path(), &["report", "--log", "log.jsonl", "--by-command-type", "--out", "rep"]));
    for f in ["report.txt", "report.json", "confusion.csv", "score_histograms.csv"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    let per_type = std::fs::read_dir(dir.path().join("rep"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("confusion_"))
        .count();
    assert!(per_type >= 1);
}

#[test]
fn report_on_empty_log_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "5");
    ok(&locomem(dir.path(), &["run", "--dataset", "data.jsonl", "--condition", "NoMem", "--out", "log.jsonl"]));
    let header = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap().lines().next().unwrap().to_string();
    std::fs::write(dir.path().join("empty.jsonl"), header + "\n").unwrap();
    let out = locomem(dir.path(), &["report", "--log", "empty.jsonl", "--out", "rep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("rep").exists());
}

#[test]
fn exit_codes_distinguish_usage_data_and_backend() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(locomem(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(locomem(dir.path(), &["--set", "no_such_key=1", "synth", "--out", "x.jsonl"]).status.code(), Some(1));
    let missing = locomem(dir.path(), &["run", "--dataset", "absent.jsonl", "--condition", "NoMem", "--out", "o.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));

    synth(dir.path(), "2", "5");
    let out = locomem(
        dir.path(),
        &[
            "--set",
            "http_url=http://127.0.0.1:1/v1/chat/completions",
            "--set",
            "http_timeout_s=1",
            "run",
            "--dataset",
            "data.jsonl",
            "--backend",
            "http",
            "--condition",
            "NoMem",
            "--out",
            "o.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("o.jsonl").exists(), "partial log left behind");
}
