use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn framecl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framecl"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = framecl(args);
    assert!(
        out.status.success(),
        "framecl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Two-language corpus and a short training run on it.
fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let run = root.join("run");
    ok(&["synth", "--out", s(&data), "--seed", "3", "--languages", "2"]);
    ok(&["train", "--data", s(&data), "--out", s(&run), "--seed", "3", "--d-in", "256", "--epochs", "2"]);
    (data, run)
}

#[test]
fn synth_is_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--out", s(&a), "--seed", "7"]);
    ok(&["synth", "--out", s(&b), "--seed", "7"]);
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json", "labels.txt", "config.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let cfg: Value = serde_json::from_slice(&read(a.join("config.json"))).unwrap();
    assert_eq!(cfg["synth"]["seed"], 7);
    assert_eq!(cfg["synth"]["languages"].as_array().unwrap().len(), 6);
}

#[test]
fn synth_single_language() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(dir.path()), "--languages", "1"]);
    let text = String::from_utf8(read(dir.path().join("train.jsonl"))).unwrap();
    assert!(text.lines().all(|l| l.contains(r#""language":"en""#)));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert_eq!(framecl(&["synth", "--out", s(&blocker.join("sub"))]).status.code(), Some(2));
    assert_eq!(framecl(&["train", "--data", s(dir.path()), "--alpha", "2"]).status.code(), Some(2));
    assert_eq!(framecl(&["train", "--data", s(dir.path()), "--out", s(&dir.path().join("r"))]).status.code(), Some(2));
    assert_eq!(framecl(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--languages", "1"]);
    let out = framecl(&[
        "train", "--data", s(&data), "--out", s(&dir.path().join("run")), "--d-in", "256", "--epochs", "2", "--lr", "1e308",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn pipeline_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path());
    for f in ["checkpoint.json", "metrics.jsonl", "thresholds.json", "config.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let cfg: Value = serde_json::from_slice(&read(run.join("config.json"))).unwrap();
    assert_eq!(cfg["model"]["d_in"], 256);
    assert_eq!(cfg["train"]["epochs"], 2);
    let ck = run.join("checkpoint.json");

    // tuning twice gives the same table, with one entry per dev language
    let (t1, t2) = (dir.path().join("t1"), dir.path().join("t2"));
    let dev = data.join("dev.jsonl");
    ok(&["tune-thresholds", "--checkpoint", s(&ck), "--dev", s(&dev), "--out", s(&t1)]);
    ok(&["tune-thresholds", "--checkpoint", s(&ck), "--dev", s(&dev), "--out", s(&t2)]);
    assert_eq!(read(t1.join("thresholds.json")), read(t2.join("thresholds.json")));
    let table: Value = serde_json::from_slice(&read(t1.join("thresholds.json"))).unwrap();
    assert_eq!(table["per_language"].as_object().unwrap().len(), 2);
    let embedded: Value = serde_json::from_slice(&read(t1.join("checkpoint.json"))).unwrap();
    assert_eq!(embedded["thresholds"], table);

    // single-language dev: zero-shot equals that language's threshold
    let en_dev = dir.path().join("en-dev.jsonl");
    let text = String::from_utf8(read(dev.clone())).unwrap();
    let en: Vec<&str> = text.lines().filter(|l| l.contains(r#""language":"en""#)).collect();
    std::fs::write(&en_dev, en.join("\n") + "\n").unwrap();
    let t3 = dir.path().join("t3");
    ok(&["tune-thresholds", "--checkpoint", s(&ck), "--dev", s(&en_dev), "--out", s(&t3)]);
    let single: Value = serde_json::from_slice(&read(t3.join("thresholds.json"))).unwrap();
    assert_eq!(single["zero_shot"], single["per_language"]["en"]);

    // an unseen language is scored with the zero-shot threshold
    let ka = dir.path().join("ka.jsonl");
    std::fs::write(&ka, text.lines().take(5).map(|l| l.replace(r#""language":"en""#, r#""language":"ka""#) + "\n").collect::<String>()).unwrap();
    let ev = dir.path().join("ev");
    ok(&["eval", "--checkpoint", s(&t1.join("checkpoint.json")), "--data", s(&ka), "--out", s(&ev)]);
    let report: Value = serde_json::from_slice(&read(ev.join("report.json"))).unwrap();
    assert_eq!(report["per_language"]["ka"]["zero_shot"], true);
    assert_eq!(report["per_language"]["ka"]["threshold"], table["zero_shot"]);
    assert!(String::from_utf8(read(ev.join("report.tsv"))).unwrap().starts_with("language\t"));

    // predictions re-thresholded offline reproduce the emitted label sets
    let pr = dir.path().join("pr");
    ok(&["predict", "--checkpoint", s(&ck), "--data", s(&data.join("test.jsonl")), "--out", s(&pr)]);
    let preds = String::from_utf8(read(pr.join("predictions.jsonl"))).unwrap();
    assert!(preds.lines().count() > 0);
    for line in preds.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let theta = r["threshold"].as_f64().unwrap();
        let mut again: Vec<&str> = r["probabilities"]
            .as_object()
            .unwrap()
            .iter()
            .filter(|(_, p)| p.as_f64().unwrap() > theta)
            .map(|(k, _)| k.as_str())
            .collect();
        again.sort_unstable();
        let labels: Vec<&str> = r["labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert_eq!(labels, again);
    }

    // a corpus labelled outside the checkpoint vocabulary is rejected
    let odd = dir.path().join("odd.jsonl");
    std::fs::write(&odd, r#"{"id":"x","language":"en","title":"t","body":"b","labels":["Morality"]}"#.to_string() + "\n").unwrap();
    assert_eq!(
        framecl(&["eval", "--checkpoint", s(&ck), "--data", s(&odd), "--out", s(&dir.path().join("e2"))]).status.code(),
        Some(2)
    );
}

#[test]
fn verify_is_stable() {
    let a = ok(&["verify"]);
    let b = ok(&["verify"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(!String::from_utf8_lossy(&a.stdout).contains("FAIL"));
}
