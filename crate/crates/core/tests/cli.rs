//! The `vcprof` binary, stage by stage, on a synthetic oracle world.

use std::path::Path;
use std::process::{Command, Output};

fn vcprof(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcprof"))
        .current_dir(dir)
        .args(["--log", "warn"])
        .args(args)
        .output()
        .expect("spawn vcprof")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vcprof(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_run_from_synth_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "5", "synth", "--out", ".", "--users", "8", "--records", "30"]);
    assert!(dir.join("vcprof.toml").exists());

    assert_eq!(ok(dir, &["ingest"]).trim(), "8 instances");
    let split = ok(dir, &["split"]);
    assert!(split.starts_with("train "), "{split}");
    ok(dir, &["pool"]);
    ok(dir, &["index"]);
    let training = ok(dir, &["--workers", "2", "build-training-data"]);
    assert!(training.contains("profiler pairs"), "{training}");
    ok(dir, &["score-records", "--split", "validation"]);
    let retrieval = ok(dir, &["eval-retrieval", "--split", "validation"]);
    assert!(retrieval.contains("generated"), "{retrieval}");
    assert!(retrieval.contains("random"), "{retrieval}");
    ok(dir, &["eval-e2e", "--split", "test", "--context", "profile"]);
    ok(dir, &["eval-e2e", "--split", "test", "--context", "none"]);
    ok(dir, &["report"]);

    let out = dir.join("out");
    for f in [
        "corpus.jsonl",
        "ingest_report.json",
        "vectors.bin",
        "splits.json",
        "pools.jsonl",
        "utility.jsonl",
        "prefs_profiler.jsonl",
        "prefs_querygen.jsonl",
        "manifest.json",
        "retrieval_report.json",
        "report.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["end_to_end"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_config_is_a_clean_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vcprof(tmp.path(), &["--config", "nope.toml", "ingest"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.toml"), "{err}");
}

#[test]
fn query_preferences_before_utility_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", ".", "--users", "5", "--records", "20"]);
    let out = vcprof(dir, &["build-prefs", "--kind", "querygen"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("utility"));
}

#[test]
fn unknown_strategy_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", ".", "--users", "5", "--records", "20"]);
    let out = vcprof(dir, &["eval-e2e", "--strategy", "psychic"]);
    assert!(!out.status.success());
}
