//! Exit codes and outputs of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn boxlab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_boxlab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("BOXLAB_THREADS", t),
        None => cmd.env_remove("BOXLAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = boxlab(&["--seed", "3", "synth", "--out-dir", s(dir.path())], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["truth.boxes", "truth.hierarchy", "train.triplets", "heldout.triplets", "leaves.scores"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("boxlab-"), "{f} lacks a header");
    }
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = boxlab(&["cluster", "--boxes", "/nonexistent/x.boxes", "--out", s(&dir.path().join("t"))], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(code(&boxlab(&["fit", "--bogus"], None)), 2);
    assert_eq!(code(&boxlab(&["frobnicate"], None)), 2);
}

#[test]
fn malformed_file_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.boxes");
    std::fs::write(&bad, "boxlab-boxes\tv1\t1\t1\nx\t0\t0\n").unwrap();
    let out = boxlab(&["cluster", "--boxes", s(&bad), "--out", s(&dir.path().join("t"))], None);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bad_thread_cap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    boxlab(&["synth", "--out-dir", s(dir.path())], None);
    let (boxes, tree) = (dir.path().join("truth.boxes"), dir.path().join("t"));
    let args = ["cluster", "--boxes", s(&boxes), "--out", s(&tree)];
    assert_eq!(code(&boxlab(&args, Some("0"))), 2);
    assert_eq!(code(&boxlab(&args, Some("many"))), 2);
    assert_eq!(code(&boxlab(&args, Some("2"))), 0);
}

#[test]
fn invalid_parameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = boxlab(&["synth", "--branching", "1", "--out-dir", s(dir.path())], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_reports_heldout_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    assert_eq!(code(&boxlab(&["synth", "--out-dir", s(dir.path())], None)), 0);
    let out = boxlab(
        &[
            "fit", "--triplets", &p("train.triplets"), "--eval", &p("heldout.triplets"), "--epochs", "50", "--out",
            &p("fit.boxes"), "--loss-out", &p("loss.tsv"),
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("entailment_accuracy\t"));
    let loss = std::fs::read_to_string(p("loss.tsv")).unwrap();
    assert_eq!(loss.lines().count(), 51);
}
