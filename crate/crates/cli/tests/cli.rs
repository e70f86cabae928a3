use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 4
[world]
scenes = 30
[model]
question_hidden = 8
attn_dim = 16
hidden = 16
concat_width = 16
fusion_width = 16
[model.encoder]
embedding_dim = 16
lstm_hidden = 8
state_dim = 16
mlp_hidden = 16
iterations = 1
[model.mac]
steps = 2
memory_dim = 16
control_dim = 16
[train]
epochs = 2
batch_size = 16
"#;

fn sgvqa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgvqa"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("SGVQA_SEED")
        .env_remove("SGVQA_OUT_DIR")
        .args(["--config", "tiny.toml", "--out-dir", "out"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn corrupt_at_level_zero_is_identity() {
    let dir = workspace();
    ok(sgvqa(dir.path(), &["prepare"]));
    ok(sgvqa(
        dir.path(),
        &["perturb", "--mode", "corrupt", "--level", "0", "--input", "out/data/scene_graphs.json", "--output", "c.json"],
    ));
    let a = std::fs::read(dir.path().join("out/data/scene_graphs.json")).unwrap();
    let b = std::fs::read(dir.path().join("c.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn probabilistic_training_log_carries_the_regime_label() {
    let dir = workspace();
    ok(sgvqa(dir.path(), &["prepare"]));
    ok(sgvqa(dir.path(), &["--epochs", "3", "train", "--regime", "probabilistic"]));
    let log = std::fs::read_to_string(dir.path().join("out/train/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.lines().all(|l| l.contains(r#""regime":"Probabilistic""#)));
    ok(sgvqa(dir.path(), &["eval", "--graphs", "noisy", "--corrupt", "0.2"]));
    let metrics = std::fs::read_to_string(dir.path().join("out/eval/metrics.json")).unwrap();
    assert!(metrics.contains("overall_accuracy"));
}

#[test]
fn ablated_training_differs_from_plain_training() {
    let dir = workspace();
    ok(sgvqa(dir.path(), &["prepare"]));
    ok(sgvqa(dir.path(), &["train", "--run", "plain"]));
    ok(sgvqa(dir.path(), &["train", "--ablate", "relations", "--run", "ablated"]));
    let plain = std::fs::read(dir.path().join("plain/model.bin")).unwrap();
    let ablated = std::fs::read(dir.path().join("ablated/model.bin")).unwrap();
    assert_ne!(plain, ablated);
    ok(sgvqa(dir.path(), &["eval", "--checkpoint", "ablated/model.bin", "--ablate", "relations"]));
    assert!(dir.path().join("out/eval/predictions.jsonl").exists());
}

#[test]
fn prepare_is_reproducible() {
    let dir = workspace();
    ok(sgvqa(dir.path(), &["prepare", "--data", "a"]));
    ok(sgvqa(dir.path(), &["prepare", "--data", "b"]));
    for file in ["manifest.json", "questions_train.json", "scene_graphs.json", "noisy_scene_graphs.json", "vocab.json", "features.bin"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn analyze_reports_missing_objects() {
    let dir = workspace();
    ok(sgvqa(dir.path(), &["prepare"]));
    let out = ok(sgvqa(
        dir.path(),
        &["analyze", "--gt", "out/data/scene_graphs.json", "--generated", "out/data/noisy_scene_graphs.json"],
    ));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ratio = doc["overlap"]["missing_object_ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio < 0.5, "{ratio}");
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = workspace();
    let out = sgvqa(dir.path(), &["prepare", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    let out = sgvqa(dir.path(), &["--batch-size", "0", "prepare"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");

    std::fs::write(dir.path().join("tiny.toml"), "[train]\nepoch = 3\n").unwrap();
    assert_eq!(sgvqa(dir.path(), &["prepare"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = workspace();
    let out = sgvqa(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "runtime");
}
