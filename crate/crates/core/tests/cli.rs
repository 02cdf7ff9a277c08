//! End-to-end runs of the `bpgnn` binary on small synthetic configs.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_bpgnn");

fn config(kind: &str) -> Value {
    json!({
        "kind": kind,
        "dataset": { "synthetic": { "nodes": 120, "classes": 3, "features": 8, "train_per_class": 5, "val": 30, "test": 45, "feature_signal": 2.0 } },
        "model": { "boolean_layers": 1, "latent_dims": [4], "hidden_dims": [8, 8] },
        "train": { "epochs": 10, "patience": 10 },
        "seeds": [0, 1],
        "robustness": { "ratios": [0.5] },
        "ablation": { "layers": [0, 1] },
        "bench": { "sizes": [60, 120], "reps": 2, "warmup": 1, "block": 32 }
    })
}

fn run(dir: &Path, sub: &str, cfg: &Value, extra: &[&str]) -> std::process::Output {
    let path = dir.join(format!("{sub}.json"));
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    let out = dir.join(format!("out-{sub}"));
    Command::new(BIN)
        .arg(sub)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap()
}

fn read(dir: &Path, sub: &str, file: &str) -> String {
    fs::read_to_string(dir.join(format!("out-{sub}")).join(file)).unwrap()
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 5] = [
        ("train", &["metrics.json", "epochs.csv", "model_seed0.ckpt", "model_seed1.ckpt"]),
        ("robustness", &["robustness.csv"]),
        ("homophily", &["homophily.csv"]),
        ("ablation-layers", &["ablation_layers.csv"]),
        ("bench", &["bench.csv"]),
    ];
    for (sub, files) in cases {
        let out = run(dir.path(), sub, &config(sub), &[]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert!(dir.path().join(format!("out-{sub}")).join(f).is_file(), "{sub} did not write {f}");
        }
    }
    let metrics: Value = serde_json::from_str(&read(dir.path(), "train", "metrics.json")).unwrap();
    assert_eq!(metrics["seeds"], json!([0, 1]));
    let epochs = read(dir.path(), "train", "epochs.csv");
    assert!(epochs.starts_with("seed,epoch,train_loss,ce_loss,graph_loss,train_acc,val_acc\n"));
    let bench = read(dir.path(), "bench", "bench.csv");
    assert_eq!(bench.lines().count(), 3);
    let robustness = read(dir.path(), "robustness", "robustness.csv");
    assert!(robustness.lines().any(|l| l.contains(",add,0.5,")));
    assert!(robustness.lines().any(|l| l.contains(",delete,0.5,")));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("train");
    cfg["model"]["hiden_dims"] = json!([8]);
    let out = run(dir.path(), "train", &cfg, &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden_dims"));

    let mut cfg = config("train");
    cfg["extra"] = json!(1);
    assert!(!run(dir.path(), "train", &cfg, &[]).status.success());
}

#[test]
fn missing_dataset_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("train");
    cfg["dataset"] = json!({ "path": "does-not-exist" });
    let out = run(dir.path(), "train", &cfg, &[]);
    assert!(!out.status.success());
}

#[test]
fn toy_training_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("train");
    let start = Instant::now();
    assert!(run(dir.path(), "train", &cfg, &[]).status.success());
    assert!(start.elapsed().as_secs_f64() < 5.0, "took {:?}", start.elapsed());
    let first = (read(dir.path(), "train", "metrics.json"), read(dir.path(), "train", "epochs.csv"));
    assert!(run(dir.path(), "train", &cfg, &[]).status.success());
    let second = (read(dir.path(), "train", "metrics.json"), read(dir.path(), "train", "epochs.csv"));
    assert_eq!(first, second);
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "train", &config("train"), &["--seed-offset", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value = serde_json::from_str(&read(dir.path(), "train", "metrics.json")).unwrap();
    assert_eq!(metrics["seeds"], json!([5, 6]));
    assert!(dir.path().join("out-train/model_seed6.ckpt").is_file());
}

#[test]
fn readme_config_parses() {
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```json\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = bpgnn::experiments::ExperimentConfig::from_json(block).unwrap();
    assert_eq!(cfg.model.boolean_layers, 2);
    assert_eq!(cfg.seeds, Some(vec![0, 1, 2, 3, 4]));
}
