//! Drives the `bat` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use approx::assert_abs_diff_eq;
use boxtrack::dataio::{load_dataset, LABELS_FILE};
use boxtrack::tracker::{FrameResult, TrackResult};
use boxtrack::training::{MODEL_CONFIG_FILE, MODEL_FILE};
use tempfile::TempDir;

const SCENE: &str = "sequences = 2\nframes = 5\nground_points = 60\n[trajectory]\nspeed = 0.2\n";
const RUN: &str = "epochs = 1\nfeature_dim = 8\ntemplate_seeds = 8\nsearch_seeds = 16\nk = 4\nn_proposals = 8\n";

fn bat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(args: &[&str]) {
    let out = bat(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Row `ALL` of scores.csv as (success, precision).
fn overall(scores: &str) -> (f64, f64) {
    let row: Vec<&str> = scores.lines().find(|l| l.starts_with("ALL,")).unwrap().split(',').collect();
    (row[4].parse().unwrap(), row[5].parse().unwrap())
}

fn synth(dir: &TempDir) -> std::path::PathBuf {
    let spec = dir.path().join("scene.toml");
    fs::write(&spec, SCENE).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--spec", p(&spec), "--out", p(&data), "--seed", "4"]);
    data
}

#[test]
fn full_workflow_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, RUN).unwrap();
    let (ck, res, rep) = (dir.path().join("ck"), dir.path().join("res"), dir.path().join("rep"));

    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck)]);
    for f in [MODEL_FILE, MODEL_CONFIG_FILE, "config.toml", "train.log"] {
        assert!(ck.join(f).is_file(), "missing {f}");
    }
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck), "--resume", "--epochs", "2"]);
    assert_eq!(fs::read_to_string(ck.join("train.log")).unwrap().lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    ok(&["track", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&res), "--k", "2"]);
    ok(&["eval", "--results", p(&res), "--data", p(&data), "--out", p(&rep), "--bins", "--checkpoint", p(&ck)]);
    for f in ["scores.csv", "sparsity.csv", "boxcloud_mse.csv"] {
        assert!(rep.join(f).is_file(), "missing {f}");
    }
    let (s, pr) = overall(&fs::read_to_string(rep.join("scores.csv")).unwrap());
    assert!((0.0..=100.0).contains(&s) && (0.0..=100.0).contains(&pr));
}

#[test]
fn ground_truth_results_score_perfectly() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let res = dir.path().join("res");
    fs::create_dir_all(&res).unwrap();
    for seq in load_dataset(&data).unwrap() {
        let frames = seq
            .frames
            .iter()
            .map(|f| FrameResult {
                frame: f.index,
                bbox: f.gt,
                score: 1.0,
                micros: 0,
                fuse_micros: 0.0,
                search_points: 0,
                template_points: 0,
                held: false,
            })
            .collect();
        let r = TrackResult { seq_id: seq.id.clone(), frames };
        fs::write(res.join(format!("{}.txt", seq.id)), r.to_text()).unwrap();
    }
    let rep = dir.path().join("rep");
    ok(&["eval", "--results", p(&res), "--data", p(&data), "--out", p(&rep)]);
    let (s, pr) = overall(&fs::read_to_string(rep.join("scores.csv")).unwrap());
    assert_abs_diff_eq!(s, 100.0, epsilon = 1e-9);
    assert_abs_diff_eq!(pr, 100.0, epsilon = 1e-9);
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (da, db) = (synth(&a), synth(&b));
    assert_eq!(fs::read(da.join(LABELS_FILE)).unwrap(), fs::read(db.join(LABELS_FILE)).unwrap());
}

#[test]
fn config_and_argument_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let out = bat(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("ck"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    fs::write(&cfg, "epochs = 1\nk = 0\n").unwrap();
    assert_eq!(code(&bat(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("ck"))])), 2);
    assert_eq!(code(&bat(&["track", "--no-such-flag"])), 2);
    assert_eq!(code(&bat(&["train", "--data", p(&data), "--out", "x", "--fusion", "telepathy"])), 2);
}

#[test]
fn missing_or_corrupt_inputs_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere");
    assert_eq!(code(&bat(&["synth", "--spec", p(&missing), "--out", p(&dir.path().join("o"))])), 3);
    assert_eq!(code(&bat(&["eval", "--results", p(&missing), "--data", p(&missing), "--out", p(&dir.path().join("o"))])), 3);

    let data = synth(&dir);
    let ck = dir.path().join("ck");
    fs::create_dir_all(&ck).unwrap();
    fs::write(ck.join(MODEL_CONFIG_FILE), "").unwrap();
    fs::write(ck.join(MODEL_FILE), b"NOTACKPT").unwrap();
    let out = bat(&["track", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diverging_training_exits_4() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("{RUN}lr = 1e200\nepochs = 3\n").replace("epochs = 1\n", "")).unwrap();
    let out = bat(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("ck"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
