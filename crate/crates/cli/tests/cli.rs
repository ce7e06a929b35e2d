use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn atk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atk")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = atk(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "segment", "train", "detect", "evaluate", "gradcheck", "serve"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(atk(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(atk(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        atk(&["train", "--segments", "x.json", "--out-dir", "o", "--profile", "huge"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_file_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = atk(&[
        "train",
        "--segments",
        s(&missing),
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn small_profile_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let ok = |args: &[&str]| {
        let out = atk(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["synth", "--out-dir", s(&p("data")), "--days", "40", "--seed", "2"]);
    ok(&[
        "segment",
        "--input",
        s(&p("data/raw.csv")),
        "--out",
        s(&p("data/segments.json")),
    ]);
    ok(&[
        "train",
        "--segments",
        s(&p("data/segments.json")),
        "--out-dir",
        s(&p("model")),
        "--profile",
        "small",
        "--seed",
        "2",
        "--max-epochs",
        "5",
    ]);
    ok(&[
        "detect",
        "--detector",
        s(&p("model/detector.json")),
        "--segments",
        s(&p("data/segments.json")),
        "--split",
        s(&p("model/split.json")),
        "--out",
        s(&p("out/detections.json")),
    ]);
    ok(&[
        "evaluate",
        "--detections",
        s(&p("out/detections.json")),
        "--labels",
        s(&p("data/labels.json")),
        "--out",
        s(&p("out/report.json")),
    ]);

    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("out/report.json")).unwrap()).unwrap();
    let acc = report["aggregate"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for m in [
        "data/run_manifest.json",
        "data/segments.manifest.json",
        "model/run_manifest.json",
        "out/detections.manifest.json",
        "out/report.manifest.json",
    ] {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p(m)).unwrap()).unwrap();
        assert!(v["tool_version"].is_string() && v["resolved"].is_object(), "{m}");
    }
    let train: Value = serde_json::from_str(&std::fs::read_to_string(p("model/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(train["resolved"]["arch"]["seq_len"], 96);
    assert_eq!(train["resolved"]["train"]["batch_size"], 4);
}

#[test]
fn gradcheck_reports_and_catches_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    assert!(atk(&["gradcheck", "--out", s(&out)]).status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["report"]["max_relative_error"].as_f64().unwrap() < 1e-4);
    assert!(atk(&["gradcheck", "--mutate", "--out", s(&out)]).status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["report"]["max_relative_error"].as_f64().unwrap() > 0.1);
}
