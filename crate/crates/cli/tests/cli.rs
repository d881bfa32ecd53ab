//! End-to-end runs of the `vlqa` binary.

use std::path::Path;
use std::process::{Command, Output};

use vlqa_core::config::RunConfig;

fn vlqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlqa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vlqa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small config rooted at `dir/data`, written to `dir/config.json`.
fn setup(dir: &Path, train: usize, test: usize, epochs: usize) -> String {
    let mut cfg = RunConfig::default();
    cfg.seed = 1;
    cfg.dims.d = 8;
    cfg.dims.d_answer = 6;
    cfg.dims.channels = 3;
    cfg.optim.epochs = epochs;
    cfg.data.train_count = train;
    cfg.data.test_count = test;
    cfg.data.dir = dir.join("data");
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_counted_splits_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 100, 20, 1);
    let stdout = ok(&["--config", &cfg, "gen"]);
    let line: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(line["train"], 100);
    assert_eq!(line["test"], 20);
    assert_eq!(line["train_histogram"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 100);

    let data = dir.path().join("data");
    let train = std::fs::read_to_string(data.join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 100);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["categories"].as_array().unwrap().len(), 4);

    let again = dir.path().join("again");
    ok(&["--config", &cfg, "--out", s(&again), "gen"]);
    for f in ["train.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(data.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_with_zero_count_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 0, 5, 1);
    let out = vlqa(&["--config", &cfg, "gen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 1"));
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"fusion": "transformer"}"#).unwrap();
    assert_eq!(vlqa(&["--config", s(&path), "gen"]).status.code(), Some(2));
    std::fs::write(&path, r#"{"dims": {"scales": 2, "k": [9, 4], "channels": 0, "d": 8, "d_answer": 4}}"#).unwrap();
    assert_eq!(vlqa(&["--config", s(&path), "gen"]).status.code(), Some(2));
    let missing = vlqa(&["--config", s(&dir.path().join("nope.json")), "gen"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn train_and_eval_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 60, 20, 2);
    ok(&["--config", &cfg, "gen"]);
    let (c1, c2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let log1 = ok(&["--config", &cfg, "--out", s(&c1), "train"]);
    let log2 = ok(&["--config", &cfg, "--out", s(&c2), "train"]);
    assert_eq!(log1.replace(s(&c1), ""), log2.replace(s(&c2), ""));
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    let epochs: Vec<serde_json::Value> = log1.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 3);
    assert!(epochs[0]["heldout_top1"].is_number());

    let (e1, e2) = (dir.path().join("e1.json"), dir.path().join("e2.json"));
    let t1 = ok(&["--out", s(&e1), "eval", "--checkpoint", s(&c1), "--split", "train"]);
    let t2 = ok(&["--out", s(&e2), "eval", "--checkpoint", s(&c1), "--split", "train"]);
    assert_eq!(t1, t2);
    assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&e1).unwrap()).unwrap();
    assert_eq!(report["n"], 60);
    assert_eq!(report["by_category"].as_object().unwrap().len(), 4);
    assert!(t1.starts_with("category"));

    let bad = vlqa(&["--out", s(&e1), "eval", "--checkpoint", s(&c1), "--split", "dev"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 40, 10, 2);
    ok(&["--config", &cfg, "gen"]);
    let (straight, half, resumed) = (dir.path().join("s.ckpt"), dir.path().join("h.ckpt"), dir.path().join("r.ckpt"));
    ok(&["--config", &cfg, "--out", s(&straight), "train"]);
    ok(&["--config", &cfg, "--out", s(&half), "train", "--epochs", "1"]);
    let log = ok(&["--out", s(&resumed), "train", "--resume", s(&half), "--epochs", "2"]);
    assert_eq!(log.lines().count(), 2);
    assert_eq!(std::fs::read(&straight).unwrap(), std::fs::read(&resumed).unwrap());

    let clash = vlqa(&["--seed", "9", "--out", s(&resumed), "train", "--resume", s(&half)]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn checkpoint_version_mismatch_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 10, 5, 1);
    ok(&["--config", &cfg, "gen"]);
    let ckpt = dir.path().join("m.ckpt");
    ok(&["--config", &cfg, "--out", s(&ckpt), "train"]);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
    std::fs::write(&ckpt, bytes).unwrap();
    let out = vlqa(&["--out", s(&dir.path().join("e.json")), "eval", "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("v9") && msg.contains("v1"), "{msg}");
}

#[test]
fn ablate_reports_requested_targets_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 40, 20, 1);
    ok(&["--config", &cfg, "gen"]);
    let out = dir.path().join("ab.json");
    let table = ok(&["--config", &cfg, "--out", s(&out), "ablate", "--targets", "task-gating"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["target"], "task-gating");
    assert!(rows[0]["delta_x"].is_number() && rows[0]["c_sem"].is_number());
    assert_eq!(table.lines().count(), 2);

    let empty = vlqa(&["--config", &cfg, "--out", s(&out), "ablate"]);
    assert_eq!(empty.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("semantic-attention"));
    let unknown = vlqa(&["--config", &cfg, "--out", s(&out), "ablate", "--targets", "attention"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn full_sweep_has_seven_finite_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 30, 20, 1);
    ok(&["--config", &cfg, "gen"]);
    let out = dir.path().join("ab.json");
    ok(&["--config", &cfg, "--out", s(&out), "ablate", "--targets", "all"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for r in rows {
        assert!(r["delta_x"].as_f64().unwrap().is_finite());
        assert!(r["c_sem"].as_f64().unwrap().is_finite());
    }
}
