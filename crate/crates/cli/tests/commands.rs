use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = "seed = 21
[synth]
n_items = 150
n_sequences = 60
text_dim = 8
[data]
interactions = \"raw/interactions.tsv\"
metadata = \"raw/metadata.jsonl\"
prepared = \"prep\"
text_dim = 8
[model]
embedding_size = 16
heads = 2
layers = 2
[train]
epochs = 2
batch_size = 16
[eval]
checkpoint = \"train/checkpoint.bin\"
";

fn miir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miir"))
        .args(args)
        .current_dir(dir)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("spawn miir")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = miir(dir, args);
    assert!(out.status.success(), "miir {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_args<'a>(cmd: &'a str, out: &'a str, sets: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--config", "run.conf", "--out", out];
    for s in sets {
        v.push("--set");
        v.push(s);
    }
    v
}

/// A directory with a config, a raw corpus and a prepared dataset.
fn prepared(sets: &[&str]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), BASE).unwrap();
    ok(dir.path(), &with_args("synth", "raw", sets));
    ok(dir.path(), &with_args("prep", "prep", sets));
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// History rows without the wall-clock column.
fn history(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_seconds").unwrap();
    text.lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(wall);
            cells.join(",")
        })
        .collect()
}

#[test]
fn every_output_line_carries_the_seed_digest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), BASE).unwrap();
    let stdout = ok(dir.path(), &["synth", "--config", "run.conf", "--out", "raw", "--seed", "5"]);
    let digest = miir::seed::seed_digest(5);
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| l.contains(&digest)), "{stdout}");
}

#[test]
fn unknown_key_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), BASE.replace("epochs = 2", "epochs = 2\nlearnin_rate = 1")).unwrap();
    let out = miir(dir.path(), &["synth", "--config", "run.conf", "--out", "raw"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
    assert!(!dir.path().join("raw").exists());
    let out = miir(dir.path(), &["synth", "--config", "run.conf", "--out", "raw", "--set", "model.depth=3"]);
    assert!(!out.status.success());
}

#[test]
fn prep_is_byte_reproducible_and_reports_table_columns() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("prep", "prep2", &[]));
    for name in ["catalog.json", "vectors.bin", "sequences.jsonl", "sequences_d.jsonl", "negatives.jsonl", "ledger.jsonl", "stats.json"] {
        let a = fs::read(dir.path().join("prep").join(name)).unwrap();
        let b = fs::read(dir.path().join("prep2").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    let stats = json(&dir.path().join("prep/stats.json"));
    let mut keys: Vec<&String> = stats.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["average_length", "brands", "categories", "items", "missing_rate", "missing_rate_d", "sequences"]);
    assert!(stats["missing_rate_d"].as_f64().unwrap() > stats["missing_rate"].as_f64().unwrap());
}

#[test]
fn zero_discard_keeps_missing_rate_and_imputes_nothing() {
    let dir = prepared(&["data.discard_prob=0", "synth.side_missing_rate=0.2"]);
    let stats = json(&dir.path().join("prep/stats.json"));
    assert_eq!(stats["missing_rate"], stats["missing_rate_d"]);
    assert!(stats["missing_rate"].as_f64().unwrap() > 0.0);
    ok(dir.path(), &with_args("train", "train", &["train.epochs=0"]));
    ok(dir.path(), &with_args("impute", "imp", &[]));
    let m = json(&dir.path().join("imp/imputation.json"));
    assert_eq!(m["category"]["f1"], Value::Null);
    assert_eq!(m["category"]["support"], 0);
    assert_eq!(m["brand"]["accuracy"], Value::Null);
    assert_eq!(m["title"]["mse"], Value::Null);
    assert_eq!(fs::read_to_string(dir.path().join("imp/predictions.jsonl")).unwrap(), "");
}

#[test]
fn rec_regime_history_has_zero_side_losses() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("train", "train", &["train.regime=rec"]));
    let rows = history(&dir.path().join("train/history.csv"));
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1], "rec");
        assert!(cells[4].parse::<f64>().unwrap() > 0.0);
        for c in &cells[5..9] {
            assert_eq!(c.parse::<f64>().unwrap(), 0.0);
        }
    }
    let report = json(&dir.path().join("train/report.json"));
    assert_eq!(report["split"], "validation");
}

#[test]
fn finetune_history_marks_the_regime_boundary() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("train", "train", &["train.regime=mii_then_rec", "train.finetune_epochs=2"]));
    let phases: Vec<String> = history(&dir.path().join("train/history.csv"))[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(phases, ["mii", "mii", "rec", "rec"]);
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_history() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("train", "full", &["train.epochs=4"]));
    ok(dir.path(), &with_args("train", "split", &["train.epochs=2"]));
    ok(dir.path(), &with_args("train", "split", &["train.epochs=4", "train.resume=true"]));
    assert_eq!(history(&dir.path().join("full/history.csv")), history(&dir.path().join("split/history.csv")));
    assert_eq!(
        fs::read(dir.path().join("full/report.json")).unwrap(),
        fs::read(dir.path().join("split/report.json")).unwrap()
    );
    let out = miir(dir.path(), &with_args("train", "split", &["train.epochs=6", "train.resume=true", "train.learning_rate=0.01"]));
    assert!(!out.status.success(), "resuming under a different config must fail");
    assert!(dir.path().join("split/checkpoint.bin").exists());
}

#[test]
fn untrained_checkpoint_ranks_like_chance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), BASE).unwrap();
    let sets = ["synth.n_items=300", "synth.n_sequences=1500", "train.epochs=0"];
    ok(dir.path(), &with_args("synth", "raw", &sets));
    ok(dir.path(), &with_args("prep", "prep", &sets));
    ok(dir.path(), &with_args("train", "train", &sets));
    ok(dir.path(), &with_args("eval", "ev", &sets));
    let report = json(&dir.path().join("ev/eval_report.json"));
    assert_eq!(report["split"], "test");
    assert_eq!(report["n_sequences"], 1500);
    let hr5 = report["hr5"].as_f64().unwrap();
    assert!((hr5 - 0.05).abs() <= 0.02, "hr5 {hr5}");
}

#[test]
fn dump_attn_writes_one_matrix_per_layer_and_head() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("train", "train", &["train.epochs=1"]));
    ok(dir.path(), &with_args("dump-attn", "attn", &["eval.user=user3"]));
    let mut files: Vec<String> = fs::read_dir(dir.path().join("attn"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["attn_l0_h0.csv", "attn_l0_h1.csv", "attn_l1_h0.csv", "attn_l1_h1.csv"]);
    let csv = fs::read_to_string(dir.path().join("attn/attn_l1_h0.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("field,1,"));
    let total: f64 = rows[1..]
        .iter()
        .flat_map(|r| r.split(',').skip(1))
        .map(|v| v.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-5, "attention row sums to {total}");
}

#[test]
fn failures_leave_no_outputs() {
    let dir = prepared(&[]);
    ok(dir.path(), &with_args("train", "train", &["train.epochs=1"]));
    let out = miir(dir.path(), &with_args("dump-attn", "attn", &["eval.user=nobody"]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nobody"));
    assert!(!dir.path().join("attn").exists());

    let out = miir(dir.path(), &with_args("eval", "ev", &["eval.checkpoint=missing.bin"]));
    assert!(!out.status.success());
    assert!(!dir.path().join("ev").exists());

    // A corrupt metadata line fails prep after the corpus was read.
    fs::write(dir.path().join("raw/metadata.jsonl"), "{not json\n").unwrap();
    let out = miir(dir.path(), &with_args("prep", "prep3", &[]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("metadata.jsonl"));
    assert!(!dir.path().join("prep3").exists());
}
