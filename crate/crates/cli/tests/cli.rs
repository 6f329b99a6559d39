use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dmvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmvf")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config small enough to train in a second or two.
fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
  "scene": {"kind": "synthetic", "length": 400, "dim": 8, "seed": 3},
  "seeds": [1, 2],
  "training": {"scenes": 2, "config": {"episodes": 5, "warmup": 50}}
}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_checkpoint_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = dmvf(&["run", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("policy checkpoint"), "{}", stderr(&o));
}

#[test]
fn disconnected_graph_fails_validation() {
    let o = dmvf(&["validate", "--graph", "edges:6:0-1,1-2,3-4,4-5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("disconnected"), "{}", stderr(&o));
    let ok = dmvf(&["validate", "--graph", "path:6"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
}

#[test]
fn bad_requirement_and_period_are_rejected() {
    assert!(!dmvf(&["validate", "--req", "1/1/1"]).status.success());
    assert!(!dmvf(&["validate", "--period", "0"]).status.success());
    assert!(!dmvf(&["validate", "--req", "3-2-1"]).status.success());
    assert!(!dmvf(&["sweep", "--axis", "diagonal"]).status.success());
}

#[test]
fn identical_runs_write_identical_csv_bytes() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path());
    let policies = dir.path().join("policies");
    let p = policies.to_str().unwrap();
    let train_out = dir.path().join("train");
    let t = dmvf(&[
        "train",
        "--config",
        &config,
        "--policies",
        p,
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert!(t.status.success(), "{}", stderr(&t));
    assert!(train_out.join("train_eval.csv").exists());
    assert!(train_out.join("train/seed-1-slow.csv").exists());
    assert!(train_out.join("config.json").exists());

    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run-{k}"));
        let o = dmvf(&[
            "run",
            "--config",
            &config,
            "--policies",
            p,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let s = dmvf(&[
            "sweep",
            "--axis",
            "consensus_variant",
            "--config",
            &config,
            "--policies",
            p,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(s.status.success(), "{}", stderr(&s));
        outputs.push((
            fs::read(out.join("run/summary.csv")).unwrap(),
            fs::read(out.join("run/seed-1.csv")).unwrap(),
            fs::read(out.join("sweep-consensus_variant.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let sweep = String::from_utf8(outputs[0].2.clone()).unwrap();
    assert_eq!(sweep.lines().count(), 6, "header plus one row per variant");
}

#[test]
fn gen_scene_output_loads_back_as_a_manifest_scene() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("gen");
    let o = dmvf(&["gen-scene", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = out.join("scene/manifest.json");
    let v = dmvf(&["validate", "--scene", manifest.to_str().unwrap()]);
    assert!(v.status.success(), "{}", stderr(&v));
    assert!(String::from_utf8_lossy(&v.stdout).contains("400 frames"));
}
