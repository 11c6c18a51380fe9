//! Drive the installed binary end to end: every verb, override handling,
//! and failure modes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_rlstage")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn bench_build_reports_both_phases() {
    let out = run(&["bench-build", "--config", config("memory_bench.json").to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("meta_graph_ms="), "got: {}", text);
    assert!(text.contains("build_ms="), "got: {}", text);
    assert!(text.contains("components="));
}

#[test]
fn bench_build_full_agent() {
    let out = run(&[
        "bench-build",
        "--config",
        config("gridworld_dqn.json").to_str().unwrap(),
        "--backend",
        "define_by_run",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("variables="));
}

#[test]
fn export_dot_writes_parseable_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.dot");
    let out = run(&[
        "export-dot",
        "--config",
        config("gridworld_dqn.json").to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("memory"));
}

#[test]
fn train_emits_metric_lines_and_honors_overrides() {
    let out = run(&[
        "train",
        "--config",
        config("gridworld_dqn.json").to_str().unwrap(),
        "--set",
        "train.total_steps=400",
        "--set",
        "train.target_return=null",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t_seconds,frames_total,fps,updates,loss,mean_return");
    let data: Vec<&str> = lines.collect();
    assert!(!data.is_empty());
    for line in data {
        assert_eq!(line.split(',').count(), 6, "bad metric line: {}", line);
    }
}

#[test]
fn train_distributed_runs_a_small_budget() {
    let out = run(&[
        "train-distributed",
        "--config",
        config("gridworld_dqn.json").to_str().unwrap(),
        "--set",
        "runner.step_budget=600",
        "--set",
        "runner.workers=2",
        "--set",
        "runner.target_return=null",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.lines().count() >= 2);
}

#[test]
fn test_component_runs_example_calls() {
    let out = run(&[
        "test-component",
        "--config",
        config("memory_bench.json").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("call insert_records"));
    assert!(text.contains("backends agree"));
}

#[test]
fn unknown_component_is_a_scoped_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"component": {"name": "no_such_thing"}}"#).unwrap();
    let out = run(&["test-component", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown component"));
}

#[test]
fn unknown_verb_fails_with_usage() {
    let out = run(&["frobnicate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage") || err.contains("usage"), "got: {}", err);
}

#[test]
fn bad_config_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, r#"{"agent": {"agent": "dqn"}}"#).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn rejected_unknown_keys_surface_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.json");
    let mut doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(config("gridworld_dqn.json")).unwrap(),
    )
    .unwrap();
    doc["agent"]["mystery_knob"] = serde_json::json!(1);
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["bench-build", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));
}
