//! End-to-end tests of the command-line interface: the commands compose on
//! the bundled fixture corpus, and failures map onto the exit-code policy.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_direct"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"hidden": 32, "n_heads": 2, "n_blocks": 1, "ffn": 64,
           "epochs": 2, "batch_size": 8, "eval_every": 10, "seed": 7}"#,
    )
    .unwrap();
    path
}

fn ingest(input: &Path, out: &Path) {
    let o = bin()
        .args(["ingest", "--input"])
        .arg(input)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    ok(&o);
}

#[test]
fn commands_compose_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = dir.join("valid.jsonl");
    ingest(&fixture_dir().join("valid.json"), &corpus);

    // stats
    let o = bin().args(["stats", "--json", "--corpus"]).arg(&corpus).output().unwrap();
    ok(&o);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["all"], 13);

    // train (tiny, no convergence expected)
    let config = tiny_config(dir);
    let run = dir.join("run");
    let o = bin()
        .args(["train", "--train"])
        .arg(&corpus)
        .arg("--out")
        .arg(&run)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    ok(&o);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["epochs_run"], 2);
    assert!(run.join("model.json").exists());
    assert!(run.join("train_log.jsonl").exists());
    assert!(run.join("manifest.jsonl").exists());

    // predict
    let preds = dir.join("preds.jsonl");
    let o = bin()
        .args(["predict", "--corpus"])
        .arg(&corpus)
        .arg("--checkpoint")
        .arg(run.join("model.json"))
        .arg("--out")
        .arg(&preds)
        .output()
        .unwrap();
    ok(&o);
    assert!(preds.exists());

    // evaluate, both modes, JSON report on disk
    for mode in ["partial", "exact"] {
        let report = dir.join(format!("report_{mode}.json"));
        let o = bin()
            .args(["evaluate", "--mode", mode, "--json", "--predictions"])
            .arg(&preds)
            .arg("--corpus")
            .arg(&corpus)
            .arg("--report")
            .arg(&report)
            .output()
            .unwrap();
        ok(&o);
        let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(rep["f1"].as_f64().unwrap() >= 0.0);
        assert!(report.exists());
    }

    // cost
    let o = bin().args(["cost", "--json", "--corpus"]).arg(&corpus).output().unwrap();
    ok(&o);
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
}

#[test]
fn ingest_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    ingest(&fixture_dir().join("train.json"), &a);
    ingest(&fixture_dir().join("train.json"), &b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bad_input_path_exits_2() {
    let o = bin()
        .args(["stats", "--corpus", "/nonexistent/corpus.jsonl"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.jsonl");
    ingest(&fixture_dir().join("valid.json"), &corpus);
    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"epochs": 2, "learning_rte": 0.001}"#).unwrap();
    let o = bin()
        .args(["train", "--train"])
        .arg(&corpus)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("learning_rte"), "stderr: {stderr}");
}

#[test]
fn missing_subcommand_exits_1() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_seed_reproduces_training_log() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.jsonl");
    ingest(&fixture_dir().join("valid.json"), &corpus);
    let config = tiny_config(tmp.path());
    let mut logs = Vec::new();
    for name in ["r1", "r2"] {
        let run = tmp.path().join(name);
        let o = bin()
            .args(["train", "--train"])
            .arg(&corpus)
            .arg("--out")
            .arg(&run)
            .arg("--config")
            .arg(&config)
            .output()
            .unwrap();
        ok(&o);
        logs.push(std::fs::read(run.join("train_log.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1], "training log differs between identical seeds");
}
