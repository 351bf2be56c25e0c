//! End-to-end runs of the `idml` binary.

use std::path::Path;
use std::process::{Command, Output};

use idml::data::{self, SynthConfig};
use idml::harness::{DataSource, RunConfig};
use serde_json::Value;

fn idml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idml")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> String {
    let mut c = RunConfig::desk();
    c.data = DataSource::Synthetic(SynthConfig {
        n_classes: 6,
        per_class: 12,
        input_dim: 5,
        ..SynthConfig::default()
    });
    c.model.hidden = vec![12];
    c.model.semantic_dim = 6;
    c.model.uncertainty_dim = 4;
    c.batch_size = 12;
    c.epochs = 3;
    c.eval.knn_k = 5;
    c.eval.n_anchors = 10;
    let p = dir.join("config.json");
    c.save(&p).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn synth_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let bin = dir.path().join("d.idmd");
    assert!(idml(&["synth", "--seed", "4", "--out", path(&csv)]).status.success());
    assert!(idml(&["synth", "--seed", "4", "--out", path(&bin), "--format", "binary"]).status.success());
    let a = data::load(&csv).unwrap();
    assert_eq!(a, data::load(&bin).unwrap());
    assert_eq!(a.len(), 500);
}

#[test]
fn train_eval_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let report = stdout_json(&idml(&["train", "--config", &cfg, "--output", path(&out), "--loss", "proxy_anchor"]));
    assert!(report["recall_at_k"]["1"].as_f64().is_some());
    for f in ["config.json", "record.json", "epochs.csv", "eval.json", "uncertainty.csv", "model.ckpt", "timing.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let record: Value = serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["loss"], "proxy_anchor");
    assert_eq!(record["epochs"].as_array().unwrap().len(), 3);

    let ckpt = out.join("model.ckpt");
    let again = stdout_json(&idml(&["eval", "--config", &cfg, "--loss", "proxy_anchor", "--checkpoint", path(&ckpt)]));
    assert_eq!(again, report);

    let data_file = dir.path().join("probe.csv");
    assert!(idml(&["synth", "--config", &cfg, "--out", path(&data_file)]).status.success());
    let diag_dir = dir.path().join("diag");
    let d = stdout_json(&idml(&[
        "diagnose",
        "--config",
        &cfg,
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data_file),
        "--output",
        path(&diag_dir),
    ]));
    assert_eq!(d["n_samples"], 72);
    let rows = std::fs::read_to_string(diag_dir.join("uncertainty.csv")).unwrap();
    assert!(rows.starts_with("id,label,is_mixed,u_norm\n"));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = idml(&["sweep", "--config", &cfg, "--param", "tau", "--values", "1,4", "--parallel"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("tau,1,") && lines[2].starts_with("tau,4,"));
}

#[test]
fn gradcheck_passes_for_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for metric in ["euclidean", "ism", "ism_dis"] {
        let v = stdout_json(&idml(&["gradcheck", "--config", &cfg, "--metric", metric, "--loss", "multi_similarity"]));
        assert_eq!(v["passed"], true, "{metric}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(idml(&["train", "--preset", "huge"]).status.code(), Some(2));
    assert_eq!(idml(&["train", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(idml(&["train", "--config", &cfg, "--tau", "0"]).status.code(), Some(2));
    assert_eq!(idml(&["sweep", "--config", &cfg, "--param", "lr", "--values", "1"]).status.code(), Some(2));
    assert_eq!(idml(&["train", "--config", &cfg, "--preset", "desk"]).status.code(), Some(2));

    let mut c = RunConfig::load(&cfg).unwrap();
    c.optimizer = idml::model::optim::OptimizerConfig::sgd(1e250, 0.0);
    let blowup = dir.path().join("blowup.json");
    c.save(&blowup).unwrap();
    let out = dir.path().join("blown");
    let o = idml(&["train", "--config", path(&blowup), "--output", path(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let record: Value = serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap();
    assert!(record["failure"].is_object());
}
