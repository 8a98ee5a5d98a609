//! End-to-end runs of the `emv` binary on a tiny dataset.

use std::path::Path;
use std::process::{Command, Output};

fn emv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn emv")
}

fn ok(args: &[&str]) -> String {
    let out = emv(args);
    assert!(
        out.status.success(),
        "emv {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bad_arguments_fail_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = emv(&["--out-dir", p(&out), "train-student", "--strategy", "scratch"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--dataset"));
    assert!(!out.exists());

    let r = emv(&["--out-dir", p(&out), "dataset", "--bogus"]);
    assert_eq!(r.status.code(), Some(2));
    let r = emv(&["--out-dir", p(&out), "train-student", "--dataset", "x", "--w", "heavy"]);
    assert_eq!(r.status.code(), Some(2));
    let r = emv(&["--out-dir", p(&out), "eval", "--dataset", "x", "--temporal", "t", "--fusion", "1"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn transfer_student_requires_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = emv(&["--out-dir", p(&out), "train-student", "--dataset", "nowhere", "--strategy", "st"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--teacher"));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = p(out);
    let common = ["--stack", "4", "--steps", "4", "--batch-size", "2", "--block-size", "8"];

    ok(&["--out-dir", o, "--seed", "3", "dataset", "--clips-per-class", "3", "--clip-length", "16"]);
    let ds = out.join("dataset");
    assert!(ds.join("manifest.json").exists());
    assert!(out.join("dataset_config.json").exists());
    let ds = p(&ds);

    let clip = std::fs::read_dir(out.join("dataset/clips")).unwrap().next().unwrap().unwrap().path();
    ok(&["--out-dir", o, "encode", "--input", p(&clip), "--gop-length", "4", "--block-size", "8"]);
    let stem = clip.file_stem().unwrap().to_str().unwrap();
    let mvs = out.join("encoded").join(format!("{stem}.mvs"));
    assert!(mvs.exists());
    ok(&["--out-dir", o, "decode", "--input", p(&mvs)]);
    assert!(out.join("decoded").join(format!("{stem}_f001_dx.pgm")).exists());

    let mut args = vec!["--out-dir", o, "train-teacher", "--dataset", ds];
    args.extend(common);
    let stdout = ok(&args);
    assert!(stdout.contains("teacher: test accuracy"));
    assert!(out.join("teacher.nnw").exists());
    assert!(out.join("flow_cache").read_dir().unwrap().next().is_some());

    let mut args = vec!["--out-dir", o, "train-teacher", "--dataset", ds, "--input", "appearance"];
    args.extend(common);
    ok(&args);
    assert!(out.join("spatial.nnw").exists());

    let teacher = out.join("teacher.nnw");
    let mut args = vec![
        "--out-dir", o, "train-student", "--dataset", ds, "--strategy", "ti+st", "--teacher", p(&teacher), "--temp",
        "3", "--w", "auto",
    ];
    args.extend(common);
    ok(&args);
    let student = out.join("student_ti_st.nnw");
    assert!(student.exists());
    let log = std::fs::read_to_string(out.join("student_ti_st_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("train-student_config.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolved"]["temperature"], 3.0);
    assert_eq!(manifest["resolved"]["stack_length"], 4);

    let spatial = out.join("spatial.nnw");
    let mut args = vec![
        "--out-dir", o, "eval", "--dataset", ds, "--temporal", p(&student), "--spatial", p(&spatial), "--fusion", "1,2",
    ];
    args.extend(common);
    assert!(ok(&args).contains("eval: test accuracy"));

    let stdout = ok(&[
        "--out-dir", o, "bench", "--dataset", ds, "--temporal", p(&student), "--spatial", p(&spatial), "--iters", "2",
        "--warmup", "1", "--stack", "4", "--block-size", "8", "--clips", "2",
    ]);
    assert!(stdout.contains("real-time threshold 25 fps"));
    assert!(out.join("bench.csv").exists());

    let stdout = ok(&["--out-dir", o, "viz-filters", "--checkpoint", p(&teacher), p(&student)]);
    assert_eq!(stdout.lines().count(), 3);
    assert!(out.join("filters_layer0_comparison.pgm").exists());

    let exp = out.join("exp");
    let mut args = vec![
        "--out-dir", p(&exp), "experiment", "--dataset", ds, "--strategies", "scratch,ti", "--seeds", "1",
        "--teacher", p(&teacher), "--sweep-temps", "1,2",
    ];
    args.extend(common);
    let stdout = ok(&args);
    assert!(stdout.contains("MV-scratch"));
    let csv = std::fs::read_to_string(exp.join("experiment.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(exp.join("temperature_sweep.csv").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["--out-dir", p(out), "dataset", "--clips-per-class", "1", "--clip-length", "16"]);
    let cfg = out.join("cfg.json");
    std::fs::write(&cfg, r#"{"stack_length": 5, "temperature": 4.0, "training": {"steps": 2, "batch_size": 2}}"#).unwrap();
    let ds = out.join("dataset");
    ok(&[
        "--out-dir", p(out), "--config", p(&cfg), "train-teacher", "--dataset", p(&ds), "--steps", "3",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("train-teacher_config.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolved"]["stack_length"], 5);
    assert_eq!(manifest["resolved"]["temperature"], 4.0);
    assert_eq!(manifest["resolved"]["training"]["steps"], 3);
    assert_eq!(manifest["resolved"]["training"]["batch_size"], 2);
}
