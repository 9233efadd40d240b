//! End-to-end tests of the binary: stage handoff through real files, the
//! determinism contract, and the missing-artifact guard.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn botsense() -> Command {
    Command::new(env!("CARGO_BIN_EXE_botsense"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = botsense().args(args).output().expect("spawn botsense");
    assert!(
        out.status.success(),
        "botsense {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a small synthetic dataset and return its directory.
fn synth_into(dir: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    run_ok(&[
        "synth",
        "--out-dir",
        path_str(dir),
        "--docs",
        "80",
        "--vocab",
        "200",
        "--clusters",
        "4",
        "--human-sessions",
        "24",
        "--bot-sessions",
        "24",
        "--seed",
        &seed.to_string(),
    ]);
    (dir.join("access.log"), dir.join("corpus.tsv"), dir.join("truth.tsv"))
}

fn run_pipeline(log: &Path, corpus: &Path, truth: &Path, out_dir: &Path) {
    run_ok(&[
        "pipeline",
        "--log",
        path_str(log),
        "--corpus",
        path_str(corpus),
        "--truth",
        path_str(truth),
        "--out-dir",
        path_str(out_dir),
        "--k",
        "6",
        "--iterations",
        "40",
        "--seed",
        "11",
    ]);
}

#[test]
fn pipeline_produces_parsable_metrics_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (log, corpus, truth) = synth_into(&tmp.path().join("synth"), 5);

    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    run_pipeline(&log, &corpus, &truth, &out1);
    run_pipeline(&log, &corpus, &truth, &out2);

    let metrics = std::fs::read_to_string(out1.join("metrics.txt")).unwrap();
    let mut seen = std::collections::HashMap::new();
    for line in metrics.lines() {
        for pair in line.split_whitespace() {
            let (key, value) = pair.split_once('=').expect("key=value");
            seen.insert(key.to_string(), value.to_string());
        }
    }
    for key in ["tp", "fp", "tn", "fn", "precision", "recall", "f_measure", "balanced_accuracy", "g_mean"] {
        let value = seen.get(key).unwrap_or_else(|| panic!("metrics missing {key}"));
        value.parse::<f64>().unwrap_or_else(|_| panic!("unparsable {key}={value}"));
    }

    // Same inputs, same seed: byte-identical artifacts.
    for name in ["metrics.txt", "metrics.json", "model.txt", "topic_model.txt", "labeled.tsv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // The JSON variant parses and agrees on balanced accuracy.
    let json = std::fs::read_to_string(out1.join("metrics.json")).unwrap();
    assert!(json.contains("\"balanced_accuracy\":"));
}

#[test]
fn stagewise_run_matches_pipeline_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (log, corpus, truth) = synth_into(&tmp.path().join("synth"), 5);

    let piped = tmp.path().join("piped");
    run_pipeline(&log, &corpus, &truth, &piped);

    let d = tmp.path().join("stages");
    std::fs::create_dir_all(&d).unwrap();
    let p = |name: &str| d.join(name);
    run_ok(&["ingest", "--log", path_str(&log), "--out", path_str(&p("entries.log"))]);
    run_ok(&[
        "sessionize",
        "--entries",
        path_str(&p("entries.log")),
        "--out",
        path_str(&p("sessions.tsv")),
    ]);
    run_ok(&[
        "lda-train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&p("model.lda")),
        "--k",
        "6",
        "--iterations",
        "40",
        "--seed",
        "11",
    ]);
    run_ok(&[
        "topics-export",
        "--model",
        path_str(&p("model.lda")),
        "--out",
        path_str(&p("topics.tsv")),
    ]);
    run_ok(&[
        "features",
        "--entries",
        path_str(&p("entries.log")),
        "--sessions",
        path_str(&p("sessions.tsv")),
        "--topics",
        path_str(&p("topics.tsv")),
        "--out",
        path_str(&p("features.tsv")),
    ]);
    run_ok(&[
        "label",
        "--entries",
        path_str(&p("entries.log")),
        "--sessions",
        path_str(&p("sessions.tsv")),
        "--features",
        path_str(&p("features.tsv")),
        "--out",
        path_str(&p("labeled.tsv")),
    ]);
    run_ok(&[
        "split",
        "--features",
        path_str(&p("labeled.tsv")),
        "--out-train",
        path_str(&p("train.tsv")),
        "--out-test",
        path_str(&p("test.tsv")),
    ]);
    run_ok(&[
        "train",
        "--features",
        path_str(&p("train.tsv")),
        "--out",
        path_str(&p("model.txt")),
        "--seed",
        "11",
    ]);
    run_ok(&[
        "evaluate",
        "--model",
        path_str(&p("model.txt")),
        "--features",
        path_str(&p("test.tsv")),
        "--out",
        path_str(&p("metrics.txt")),
    ]);

    let stagewise = std::fs::read(p("metrics.txt")).unwrap();
    let piped = std::fs::read(piped.join("metrics.txt")).unwrap();
    assert_eq!(stagewise, piped, "stagewise metrics differ from pipeline metrics");
}

#[test]
fn train_without_features_file_fails_with_named_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_features.tsv");
    let out = botsense()
        .args([
            "train",
            "--features",
            path_str(&missing),
            "--out",
            path_str(&tmp.path().join("model.txt")),
        ])
        .output()
        .expect("spawn botsense");
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("no_such_features.tsv"),
        "stderr does not name the missing artifact: {stderr}"
    );
    assert!(stderr.contains("train"), "stderr does not name the stage: {stderr}");
}

#[test]
fn config_file_applies_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, corpus, _) = synth_into(&tmp.path().join("synth"), 9);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 11\n\n[lda]\nk = 4\niterations = 30\n").unwrap();

    // k from the config file.
    let model_a = tmp.path().join("a.lda");
    run_ok(&[
        "lda-train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&model_a),
        "--config",
        path_str(&cfg),
    ]);
    let text = std::fs::read_to_string(&model_a).unwrap();
    assert!(text.lines().any(|l| l == "k 4"), "config k not applied");

    // Flag overrides the config.
    let model_b = tmp.path().join("b.lda");
    run_ok(&[
        "lda-train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&model_b),
        "--config",
        path_str(&cfg),
        "--k",
        "3",
    ]);
    let text = std::fs::read_to_string(&model_b).unwrap();
    assert!(text.lines().any(|l| l == "k 3"), "flag did not override config");

    // Unknown config keys are rejected.
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[lda]\nkay = 5\n").unwrap();
    let out = botsense()
        .args([
            "lda-train",
            "--corpus",
            path_str(&corpus),
            "--out",
            path_str(&tmp.path().join("c.lda")),
            "--config",
            path_str(&bad),
        ])
        .output()
        .expect("spawn botsense");
    assert!(!out.status.success(), "typo config key was accepted");
}
