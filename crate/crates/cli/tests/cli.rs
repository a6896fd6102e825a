use std::path::Path;
use std::process::{Command, Output};

use hmr_cli::features::FeatureFile;
use hmr_core::config::RunConfig;
use hmr_core::numeric::RngSeed;
use hmr_core::training::{synthetic_task, Checkpoint, Model};
use serde_json::Value;

const TINY: &str = "num_layers = 1\nnum_samples = 3\nsteps = 2\n";

fn hmr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmr")).current_dir(dir).args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.cfg"), "num_layerz = 2\n").unwrap();
    let out = hmr(dir.path(), &["train", "--config", "bad.cfg", "--out", "run"]);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_layerz"));
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let dir = setup();
    assert_exit(&hmr(dir.path(), &["eval", "--checkpoint", "nope.bin", "--out", "ev"]), 2);
}

#[test]
fn zero_steps_store_the_initialization() {
    let dir = setup();
    let out = hmr(dir.path(), &["train", "--config", "tiny.cfg", "--seed", "4", "--steps", "0", "--out", "run"]);
    assert_exit(&out, 0);
    let ckpt = Checkpoint::load(&dir.path().join("run/checkpoint.bin")).unwrap();
    let fresh = Model::new(&ckpt.config.decoder, RngSeed(4)).unwrap();
    assert_eq!(ckpt.model.store.values(), fresh.store.values());
    assert_eq!(ckpt.config.train.steps, 0);
    let manifest = read_json(&dir.path().join("run/manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["num_layers"], "1");
}

#[test]
fn features_file_matches_the_synthetic_dataset() {
    let dir = setup();
    assert_exit(&hmr(dir.path(), &["train", "--config", "tiny.cfg", "--seed", "1", "--out", "run"]), 0);
    let cfg = RunConfig::parse(TINY).unwrap();
    let (_, data) = synthetic_task(&cfg, RngSeed(1)).unwrap();
    let file = FeatureFile::from_samples(&data);
    std::fs::write(dir.path().join("features.json"), serde_json::to_string(&file).unwrap()).unwrap();

    let ckpt = "run/checkpoint.bin";
    assert_exit(&hmr(dir.path(), &["eval", "--checkpoint", ckpt, "--seed", "1", "--out", "synthetic"]), 0);
    let args = ["eval", "--checkpoint", ckpt, "--features", "features.json", "--out", "external"];
    assert_exit(&hmr(dir.path(), &args), 0);
    let (a, b) = (read_json(&dir.path().join("synthetic/eval.json")), read_json(&dir.path().join("external/eval.json")));
    assert_eq!(a["per_sample"], b["per_sample"]);

    let mut unlabelled = file.clone();
    unlabelled.samples[1].params = None;
    std::fs::write(dir.path().join("unlabelled.json"), serde_json::to_string(&unlabelled).unwrap()).unwrap();
    let args = ["eval", "--checkpoint", ckpt, "--features", "unlabelled.json", "--out", "x"];
    assert_exit(&hmr(dir.path(), &args), 2);
    let args = ["visualize", "--checkpoint", ckpt, "--features", "unlabelled.json", "--sample", "1", "--out", "vis"];
    assert_exit(&hmr(dir.path(), &args), 0);
}

#[test]
fn eval_joint_subset() {
    let dir = setup();
    assert_exit(&hmr(dir.path(), &["train", "--config", "tiny.cfg", "--steps", "0", "--out", "run"]), 0);
    let args = ["eval", "--checkpoint", "run/checkpoint.bin", "--joints", "0,3,7", "--out", "ev"];
    assert_exit(&hmr(dir.path(), &args), 0);
    let report = read_json(&dir.path().join("ev/eval.json"));
    assert_eq!(report["joints"], serde_json::json!([0, 3, 7]));
    let csv = std::fs::read_to_string(dir.path().join("ev/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn visualize_rejects_bad_arguments() {
    let dir = setup();
    assert_exit(&hmr(dir.path(), &["train", "--config", "tiny.cfg", "--steps", "0", "--out", "run"]), 0);
    let ckpt = "run/checkpoint.bin";
    assert_exit(&hmr(dir.path(), &["visualize", "--checkpoint", ckpt, "--sample", "3", "--out", "v"]), 2);
    assert_exit(&hmr(dir.path(), &["visualize", "--checkpoint", ckpt, "--threshold=-1", "--out", "v"]), 2);
}

fn ablation_rows(dir: &Path, suite: &str) -> Vec<Vec<String>> {
    let out = hmr(dir, &["ablate", "--suite", suite, "--config", "tiny.cfg", "--steps", "1", "--out", suite]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.join(suite).join(format!("{suite}.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(hmr_cli::commands::ABLATION_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn ablation_suites_name_their_variants() {
    let dir = setup();
    let rows = ablation_rows(dir.path(), "table3");
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["heads16-groups8-range1", "heads16-groups8-range2", "heads8-groups4-range1", "heads8-groups4-range2"]);
    for r in &rows {
        assert_eq!((r[1].as_str(), r[2].as_str(), r[7].as_str()), ("deformable", "multi", "ok"));
    }
    let rows = ablation_rows(dir.path(), "table4");
    let pe: Vec<&str> = rows.iter().map(|r| r[6].as_str()).collect();
    assert_eq!(pe, ["none", "absolute", "relative"]);
    for name in ["none", "absolute", "relative"] {
        assert!(dir.path().join("table4").join(format!("{name}.loss.csv")).exists());
    }
    let manifest: Value = read_json(&dir.path().join("table4/manifest.json"));
    assert_eq!(manifest["command"], "ablate");
}

#[test]
fn gradcheck_writes_its_table() {
    let dir = setup();
    assert_exit(&hmr(dir.path(), &["gradcheck", "--seed", "2", "--out", "gc"]), 0);
    let csv = std::fs::read_to_string(dir.path().join("gc/gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("op,max_rel_error,checked,status"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")));
    assert!(dir.path().join("gc/manifest.json").exists());
}
