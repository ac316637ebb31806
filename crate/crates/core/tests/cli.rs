//! End-to-end runs of the `spangraph` binary on a tiny synthetic corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spangraph::corpus::Corpus;
use spangraph::metrics::{evaluate, Task};

const BIN: &str = env!("CARGO_BIN_EXE_spangraph");

const TINY: &str = r#"
[synth]
n_docs = 5

[model]
hidden = 12
event_hidden = 12

[model.encoder]
embed_dim = 8

[model.spans]
dim = 12
width_dim = 4

[train]
max_epochs = 2
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

/// Synthesizes data and trains once; returns `(tempdir, data dir, run dir)`.
fn trained() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let data = dir.path().join("data");
    let out = run(&[
        "synth",
        "--config",
        s(&config),
        "--seed",
        "4",
        "--output",
        s(&data),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        s(&config),
        "--train",
        s(&data.join("train.jsonl")),
        "--dev",
        s(&data.join("dev.jsonl")),
        "--output",
        s(&run_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, data, run_dir)
}

#[test]
fn synth_train_evaluate_predict_inspect() {
    let (_dir, data, run_dir) = trained();
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.exists());
    let history = fs::read_to_string(run_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["train_loss"].as_f64().unwrap().is_finite());
        assert!(v["dev_loss"].as_f64().is_some());
    }

    let test = data.join("test.jsonl");
    let out = run(&["evaluate", "--checkpoint", s(&ckpt), "--input", s(&test)]);
    assert!(out.status.success());
    let metrics: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&str> = metrics.keys().map(String::as_str).collect();
    let mut expected: Vec<&str> = Task::ALL.iter().map(|t| t.key()).collect();
    expected.sort();
    assert_eq!(keys, expected);

    // predictions parse as a corpus and re-score to the same numbers
    let pred_path = run_dir.join("pred.jsonl");
    let out = run(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&test),
        "--output",
        s(&pred_path),
    ]);
    assert!(out.status.success());
    let gold = Corpus::read(&test, None).unwrap();
    let pred = Corpus::read(&pred_path, Some(&gold.schema)).unwrap();
    assert_eq!(pred.documents.len(), gold.documents.len());
    assert!(pred.documents.iter().all(|d| d.confidences.is_some()));
    let ev = evaluate(&pred.documents, &gold.documents, &Task::ALL).unwrap();
    assert_eq!(
        serde_json::to_value(ev.scores()).unwrap(),
        serde_json::to_value(&metrics).unwrap()
    );

    let again = run_dir.join("pred2.jsonl");
    run(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&test),
        "--output",
        s(&again),
    ]);
    assert_eq!(fs::read(&pred_path).unwrap(), fs::read(&again).unwrap());

    let insp = run_dir.join("inspect");
    let out = run(&[
        "inspect",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&test),
        "--mechanism",
        "coref",
        "--output",
        s(&insp),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(insp.join("coref_links.csv")).unwrap();
    let mut sums: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let strength: f64 = f[4].parse().unwrap();
        *sums.entry((f[0].into(), f[1].into(), f[3].into())).or_default() += strength;
    }
    assert!(!sums.is_empty());
    for (k, total) in sums {
        assert!((total - 1.0).abs() < 1e-9, "{k:?} sums to {total}");
    }
    assert!(fs::read_to_string(insp.join("coref_links.dot"))
        .unwrap()
        .starts_with("digraph coref"));

    let out = run(&[
        "inspect",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&test),
        "--mechanism",
        "event",
        "--output",
        s(&insp),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(insp.join("event_links.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let strength: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(strength >= 0.0);
    }
}

#[test]
fn fixed_seed_gives_identical_history() {
    let (_a, _, run_a) = trained();
    let (_b, _, run_b) = trained();
    assert_eq!(
        fs::read(run_a.join("history.jsonl")).unwrap(),
        fs::read(run_b.join("history.jsonl")).unwrap()
    );
}

#[test]
fn missing_dev_file_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--output", s(&data)]).status.success());
    let out = run(&[
        "train",
        "--train",
        s(&data.join("train.jsonl")),
        "--dev",
        s(&dir.path().join("missing.jsonl")),
        "--output",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    let e = error_line(&out);
    assert_eq!(e["error"]["kind"], "corpus");
    assert!(e["error"]["message"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn empty_test_file_and_unknown_config_keys_fail() {
    let (dir, _, run_dir) = trained();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = run(&[
        "evaluate",
        "--checkpoint",
        s(&run_dir.join("model.ckpt")),
        "--input",
        s(&empty),
    ]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"]["kind"], "input");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model.spans]\nlambda = 0.4\n").unwrap();
    let out = run(&["synth", "--config", s(&bad), "--output", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"]["kind"], "config");
}

#[test]
fn inspecting_a_disabled_mechanism_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(
        &config,
        format!("{TINY}\n[model.propagation]\nrelation = false\n"),
    )
    .unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", s(&config), "--output", s(&data)])
        .status
        .success());
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        s(&config),
        "--train",
        s(&data.join("train.jsonl")),
        "--dev",
        s(&data.join("dev.jsonl")),
        "--output",
        s(&run_dir),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "inspect",
        "--checkpoint",
        s(&run_dir.join("model.ckpt")),
        "--input",
        s(&data.join("test.jsonl")),
        "--mechanism",
        "relation",
        "--output",
        s(&dir.path().join("i")),
    ]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"]["kind"], "config");
}

#[test]
fn usage_errors_exit_two() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "usage");
}
