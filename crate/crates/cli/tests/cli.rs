use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn srl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(args)
        .env_remove("SRL_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run srl")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "word_dim = 8\npos_dim = 4\nchar_dim = 4\nfilters = 4\nhidden = 8\nlayers = 1\n\
    ffn_hidden = 8\nrole_dim = 8\nscore_dim = 4\nattention_dim = 4\nrefine_hidden = 8\nmax_epochs = 2\nmin_freq = 1\n";

fn train_small(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let model = dir.join("m.srl");
    let train = fixture("train20.conll");
    let out = srl(&[
        "train",
        "--config",
        path(&cfg),
        "--train",
        path(&train),
        "--dev",
        path(&train),
        "--out",
        path(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn train_writes_archive_and_epoch_log() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    assert!(model.exists());
    let log = std::fs::read_to_string(dir.path().join("m.srl.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 2);
}

#[test]
fn missing_train_is_a_usage_error() {
    let out = srl(&["train", "--dev", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--train"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let out = srl(&["train", "--print-config", "--set", "hiden=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));
}

#[test]
fn print_config_lists_keys() {
    let out = srl(&["train", "--print-config", "--set", "iterations=3"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("iterations = 3"));
    assert!(text.contains("learning_rate"));
}

#[test]
fn unreadable_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conll");
    let out = srl(&["eval", "--gold", path(&missing), "--pred", path(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.conll"));
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let gold = fixture("eval_gold.conll");
    let out = srl(&["eval", "--gold", path(&gold), "--pred", path(&gold)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("arguments    P 1.0000  R 1.0000  F1 1.0000"));
}

#[test]
fn eval_sentence_count_mismatch_fails() {
    let out = srl(&[
        "eval",
        "--gold",
        path(&fixture("eval_gold.conll")),
        "--pred",
        path(&fixture("train20.conll")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_on_empty_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let empty = dir.path().join("empty.conll");
    std::fs::write(&empty, "").unwrap();
    let out = srl(&["predict", "--model", path(&model), "--input", path(&empty)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn analyze_writes_sweep_and_distance_tables() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let report = dir.path().join("report");
    let out = srl(&[
        "analyze",
        "--model",
        path(&model),
        "--dev",
        path(&fixture("train20.conll")),
        "--sweep",
        "0..2",
        "--out-dir",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(report.join("sweep.tsv")).unwrap();
    let rows: Vec<&str> = sweep.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    let distance = std::fs::read_to_string(report.join("distance.tsv")).unwrap();
    assert!(distance.contains(">=7"));
    assert!(report.join("report.tsv").exists());
}

#[test]
fn gradcheck_baseline_path_passes() {
    let out = srl(&["gradcheck", "--iterations", "0"]);
    assert_eq!(out.status.code(), Some(0));
}
