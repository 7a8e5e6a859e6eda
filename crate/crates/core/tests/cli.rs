use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurodram::volume::Manifest;
use serde_json::Value;

const TINY: &str = r#"{
  "data": {
    "synthetic": {"volume_side": 16, "glimpse_side": 8, "pool_stages": 2, "signal_center": [0.3, -0.3, 0.3],
                  "radius_class0": 4.0, "radius_class1": 1.5, "distractor_count": 1},
    "subjects_per_class": 10
  },
  "model": {"glimpse_side": 8, "steps": 3, "hidden": 16, "trunk": {"channels": [4, 8], "kernel": 3, "pools": [2, 2]}},
  "baseline": {"volume_side": 16, "trunk": {"channels": [4, 8], "kernel": 3, "pools": [2, 2]}, "fc_hidden": 8},
  "train": {"epochs": 2, "batch_size": 4}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurodram")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn setup(seed: &str) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    ok(&["--config", s(&config), "--seed", seed, "--out", s(&data), "generate"]);
    Setup { _dir: dir, root, config, data }
}

#[test]
fn generate_is_balanced_and_seeded() {
    let a = setup("3");
    let m = Manifest::read(a.data.join("manifest.json")).unwrap();
    assert_eq!(m.cases.len(), 20);
    assert_eq!(m.cases.iter().filter(|c| c.label == 1).count(), 10);
    let b = setup("3");
    assert_eq!(fs::read(a.data.join("manifest.json")).unwrap(), fs::read(b.data.join("manifest.json")).unwrap());
    let c = setup("4");
    assert_ne!(fs::read(a.data.join("manifest.json")).unwrap(), fs::read(c.data.join("manifest.json")).unwrap());

    let o = run(&["--config", s(&a.config), "--out", s(&a.data), "generate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not empty"));
}

#[test]
fn train_eval_trace_round_trip() {
    let t = setup("5");
    let out = t.root.join("run");
    let cfg = s(&t.config);
    let summary: Value =
        serde_json::from_str(&ok(&["--config", cfg, "--out", s(&out), "train", "--data", s(&t.data)])).unwrap();
    for f in ["checkpoint.ndck", "train_log.jsonl", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(out.join("train_log.jsonl")).unwrap().lines().count(),
        summary["epochs_run"].as_u64().unwrap() as usize
    );

    let ckpt = out.join("checkpoint.ndck");
    let eval: Value = serde_json::from_str(&ok(&[
        "--config",
        cfg,
        "--out",
        s(&out),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&t.data),
        "--split",
        "val",
    ]))
    .unwrap();
    assert_eq!(eval["metrics"], summary["val"]);
    assert!(out.join("eval_val.json").exists());

    let m = Manifest::read(t.data.join("manifest.json")).unwrap();
    let id = m.cases[0].case_id.clone();
    let trace = |dir: &str| {
        ok(&[
            "--config",
            cfg,
            "--out",
            s(&t.root.join(dir)),
            "trace",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&t.data),
            &id,
        ])
    };
    let first = trace("t1");
    assert_eq!(first, trace("t2"));
    let line: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["case_id"], id.as_str());
    assert_eq!(line["steps"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(t.root.join("t1/traces.jsonl")).unwrap(), first);

    let o = run(&[
        "--config",
        cfg,
        "--out",
        s(&t.root.join("t3")),
        "trace",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&t.data),
        "nope-1",
        &id,
        "nope-2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nope-1") && err.contains("nope-2"), "{err}");
    assert!(!t.root.join("t3/traces.jsonl").exists());
}

#[test]
fn baseline_trains_from_the_cli() {
    let t = setup("6");
    let out = t.root.join("cnn");
    let summary: Value = serde_json::from_str(&ok(&[
        "--config",
        s(&t.config),
        "--out",
        s(&out),
        "train",
        "--data",
        s(&t.data),
        "--model",
        "baseline-cnn",
    ]))
    .unwrap();
    assert_eq!(summary["model"], "baseline-cnn");
    let o = run(&["--out", s(&out), "eval", "--checkpoint", s(&out.join("checkpoint.ndck")), "--data", s(&t.data)]);
    assert_eq!(o.status.code(), Some(2), "a checkpoint from another config must be refused");
}

#[test]
fn verify_exit_codes() {
    assert!(run(&["verify", "isolation"]).status.success());
    assert_eq!(run(&["verify", "isolation", "--disable-stops"]).status.code(), Some(1));
}

#[test]
fn bad_config_is_reported_with_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\n  \"train\": {\n    \"batch_sise\": 4\n  }\n}").unwrap();
    let o = run(&["--config", s(&p), "verify", "isolation"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("batch_sise") && err.contains("line 3"), "{err}");
}
