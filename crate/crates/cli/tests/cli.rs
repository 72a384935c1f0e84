use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iusp::data::read_manifest_rows;
use iusp::eval::write_predictions;
use ndarray::Array2;

fn iusp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iusp"))
        .args(args)
        .env_remove("IUSP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = iusp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    ok(&[
        "synth", "--seed", "3", "--train", "8", "--val", "4", "--test", "4", "--clip-seconds", "1", "--out", p(dir),
    ]);
}

#[test]
fn unknown_verb_and_bad_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = iusp(&["frobnicate", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    assert_eq!(iusp(&["synth", "--seed", "abc", "--out", "x"]).status.code(), Some(2));
    assert_eq!(iusp(&["synth"]).status.code(), Some(2));
}

#[test]
fn every_verb_has_help() {
    for verb in ["synth", "features", "train", "suite", "tune-hints", "eval", "report"] {
        let out = iusp(&[verb, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{verb}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn synth_writes_manifests_and_audio() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "synth", "--seed", "7", "--train", "6", "--val", "2", "--test", "2", "--clip-seconds", "1", "--out", p(&data),
    ]);
    for (split, n) in [("train", 6), ("val", 2), ("test", 2)] {
        let rows = read_manifest_rows(&data.join(format!("{split}.csv"))).unwrap();
        assert_eq!(rows.len(), n);
        for r in rows {
            assert!(data.join("audio").join(format!("{}.wav", r.clip_id)).is_file());
        }
    }
    let record = fs::read_to_string(data.join("synth.toml")).unwrap();
    assert!(record.contains("seed = 7"));
}

#[test]
fn missing_config_is_a_one_line_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = iusp(&["train", "--config", "missing.cfg", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]"), "{err}");
    assert!(err.contains("missing.cfg"));
}

#[test]
fn missing_data_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = iusp(&["train", "--setup", "BCE", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn eval_prints_micro_and_classwise_auprc() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let rows = read_manifest_rows(&data.join("train.csv")).unwrap();
    let scores = Array2::from_shape_fn((rows.len(), 8), |(i, k)| if rows[i].labels[k] { 0.9 } else { 0.1 });
    let ids: Vec<String> = rows.iter().map(|r| r.clip_id.clone()).collect();
    let pred = tmp.path().join("p.csv");
    write_predictions(&pred, &ids, &scores).unwrap();
    let out_dir = tmp.path().join("eval");
    let stdout = ok(&[
        "eval", "--pred", p(&pred), "--labels", p(&data.join("train.csv")), "--out", p(&out_dir),
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], "micro_auprc\t1.000000");
    for f in ["metrics.csv", "pr_curve.csv", "pr_curve.png"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn report_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = iusp(&["report", "--run", p(tmp.path()), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[invalid-input]"));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let feats = tmp.path().join("feats");
    ok(&["features", "--data", p(&data), "--clip-seconds", "1", "--out", p(&feats)]);

    let teacher_dir = tmp.path().join("teacher");
    ok(&[
        "train", "--model", "teacher", "--teacher-channels", "4,4,4,4", "--teacher-kernel", "3", "--max-epochs", "2",
        "--patience", "1", "--lr", "1e-3", "--features", p(&feats), "--out", p(&teacher_dir),
    ]);
    let teacher = teacher_dir.join("best.ckpt");
    assert!(teacher.is_file());

    // a student run reproduces bit-for-bit from its written config
    let s1 = tmp.path().join("s1");
    ok(&[
        "train", "--setup", "BCE+KD+SP+IUSP", "--lstm-hidden", "8", "--max-epochs", "2", "--patience", "1", "--seed",
        "5", "--teacher", p(&teacher), "--features", p(&feats), "--out", p(&s1),
    ]);
    let s2 = tmp.path().join("s2");
    ok(&["train", "--config", p(&s1.join("config.toml")), "--out", p(&s2)]);
    for f in ["result.csv", "epochs.csv", "steps.tsv", "test_predictions.csv"] {
        assert_eq!(fs::read(s1.join(f)).unwrap(), fs::read(s2.join(f)).unwrap(), "{f}");
    }

    let suite = tmp.path().join("suite");
    let suite_args = |out: &Path| {
        ok(&[
            "suite", "--setup", "BCE", "--setup", "BCE+KD+IUSP", "--lstm-hidden", "16", "--trials", "2",
            "--max-epochs", "1", "--patience", "0", "--teacher", p(&teacher), "--features", p(&feats), "--out", p(out),
        ])
    };
    let stdout = suite_args(&suite);
    assert_eq!(stdout.lines().count(), 2);
    let again = tmp.path().join("suite2");
    suite_args(&again);
    for f in ["results.csv", "summary.csv"] {
        assert_eq!(fs::read(suite.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(suite.join("suite.toml")).unwrap().contains("seeds = [0, 1]"));

    let report = tmp.path().join("report");
    ok(&["report", "--run", p(&suite), "--out", p(&report), "--clip-seconds", "1"]);
    let bars = fs::read_to_string(report.join("micro_auprc.csv")).unwrap();
    // two setups at one size: two groups of one bar
    assert_eq!(bars.lines().count(), 3);
    for f in [
        "micro_auprc.png",
        "improvements.csv",
        "classwise.csv",
        "classwise.png",
        "similarity_alert-signal.png",
        "similarity_human-voice.png",
        "similarity_human-voice.csv",
    ] {
        assert!(report.join(f).is_file(), "{f}");
    }

    let tune = tmp.path().join("tune");
    ok(&[
        "tune-hints", "--setup", "BCE+KD+IUSP", "--lstm-hidden", "16", "--trials", "1", "--max-epochs", "0",
        "--teacher", p(&teacher), "--features", p(&feats), "--out", p(&tune),
    ]);
    let table = fs::read_to_string(tune.join("tuning.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 8);
    assert!(fs::read_to_string(tune.join("hints.toml")).unwrap().contains("hint_iusp"));
}

#[test]
fn data_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let out = Command::new(env!("CARGO_BIN_EXE_iusp"))
        .args(["features", "--clip-seconds", "1", "--out", p(&tmp.path().join("f"))])
        .env("IUSP_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("f").join("test.feat").is_file());
}
