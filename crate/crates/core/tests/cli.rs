use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sinc_asr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinc-asr")).args(args).output().expect("running sinc-asr")
}

fn ok(args: &[&str]) -> String {
    let out = sinc_asr(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, n: &str) {
    ok(&["synth-data", "--seed", seed, "--n", n, "--out", p(dir)]);
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir).into_iter().map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap())).collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn write_run_config(dir: &Path, preset: &str) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "model": { "preset": preset, "channels": 2, "lstm_layers": 1, "lstm_hidden": 4 },
        "train": { "lr": 0.001, "batch_size": 4, "max_epochs": 2, "seed": 5 },
        "data": { "train_manifest": "data/manifest.jsonl", "dev_manifest": "data/manifest.jsonl" },
        "output_dir": "run"
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn synth_data_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "11", "6");
    synth(&b, "11", "6");
    synth(&c, "12", "6");
    let first = tree_bytes(&a);
    assert_eq!(first.len(), 8, "six wavs, manifest and vocabulary");
    assert_eq!(first, tree_bytes(&b));
    assert_ne!(first, tree_bytes(&c));
    let manifest = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
}

#[test]
fn build_vocab_merges_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["synth-data", "--seed", "1", "--n", "4", "--tokens", "AB", "--out", p(&tmp.path().join("x"))]);
    ok(&["synth-data", "--seed", "1", "--n", "4", "--tokens", "CD", "--out", p(&tmp.path().join("y"))]);
    let out = tmp.path().join("vocab.txt");
    let x = tmp.path().join("x/manifest.jsonl");
    let y = tmp.path().join("y/manifest.jsonl");
    ok(&["build-vocab", "--manifest", p(&x), "--manifest", p(&y), "--out", p(&out)]);
    let tokens = fs::read_to_string(&out).unwrap();
    for ch in ["A", "B", "C", "D"] {
        assert!(tokens.lines().any(|l| l == ch), "{ch} missing from {tokens:?}");
    }
}

#[test]
fn train_eval_decode_inspect_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(&dir.join("data"), "3", "8");
    let config = write_run_config(dir, "ablation-k65");
    ok(&["train", "--config", p(&config)]);

    let run = dir.join("run");
    for file in ["vocab.txt", "config.json", "train_log.csv", "final.ckpt", "checkpoints/epoch-0001.ckpt", "checkpoints/epoch-0002.ckpt"] {
        assert!(run.join(file).exists(), "{file} missing");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss,dev_cer,seconds");
    assert_eq!(lines.len(), 3);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        let loss: f64 = fields[1].parse().unwrap();
        let cer: f64 = fields[2].parse().unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(cer >= 0.0);
    }
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(stored["model"]["preset"], "ablation-k65");

    let ckpt = run.join("final.ckpt");
    let manifest = dir.join("data/manifest.jsonl");
    let cer = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest)]);
    let value: f64 = cer.trim().strip_prefix("CER ").expect("CER line").parse().unwrap();
    assert!(value >= 0.0);

    let wav = dir.join("data/wav/utt0000.wav");
    let text = ok(&["decode", "--checkpoint", p(&ckpt), "--wav", p(&wav)]);
    assert_eq!(text, ok(&["decode", "--checkpoint", p(&ckpt), "--wav", p(&wav)]));

    let csv = dir.join("filters.csv");
    ok(&["inspect-filters", "--checkpoint", p(&ckpt), "--out", p(&csv)]);
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("index,f1_hz,f2_hz,"));
    assert_eq!(rows.lines().count(), 1 + 2, "header plus one row per sinc filter");

    let resumed = dir.join("resumed");
    ok(&["train", "--config", p(&config), "--epochs", "3", "--out", p(&resumed), "--resume", p(&ckpt)]);
    let log = fs::read_to_string(resumed.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "only the third epoch runs");
    assert!(log.lines().nth(1).unwrap().starts_with("3,"));
}

#[test]
fn double_precision_runs_and_cnn_model_has_no_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(&dir.join("data"), "4", "4");
    let config = write_run_config(dir, "cnn1");
    ok(&["train", "--config", p(&config), "--epochs", "1", "--precision", "double"]);
    let ckpt = dir.join("run/final.ckpt");
    let out = sinc_asr(&["inspect-filters", "--checkpoint", p(&ckpt), "--out", p(&dir.join("f.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no sinc layer"));
    let out = sinc_asr(&["train", "--config", p(&config), "--precision", "single", "--resume", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(sinc_asr(&[]).status.code(), Some(2));
    assert_eq!(sinc_asr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sinc_asr(&["eval", "--checkpoint", "x.ckpt"]).status.code(), Some(2));
    assert_eq!(sinc_asr(&["--help"]).status.code(), Some(0));
    let out = sinc_asr(&["decode", "--checkpoint", "/nonexistent.ckpt", "--wav", "/nonexistent.wav"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn grad_check_command_reports_each_operation() {
    let out = ok(&["grad-check", "--seeds", "1"]);
    assert_eq!(out.lines().filter(|l| l.contains("PASS")).count(), 10, "{out}");
    assert!(!out.contains("FAIL"));
}
