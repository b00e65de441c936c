use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mgnma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgnma")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = mgnma(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let line: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["status"], "ok");
    line["result"].clone()
}

/// Exit code and the single JSON error line.
fn fails(args: &[&str]) -> (i32, Value) {
    let out = mgnma(args);
    assert!(out.stdout.is_empty(), "stdout on failure: {}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stderr).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    let line: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(line["status"], "error");
    (out.status.code().unwrap(), line)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let r = ok(&["synth", "--seed", "5", "--n-videos", "6", "--frames", "30", "--out", s(dir)]);
        assert_eq!(r["videos"], 6);
    }
    let ta = tree_bytes(&a);
    assert_eq!(ta, tree_bytes(&b));
    assert!(ta.iter().any(|(p, _)| p == "manifest.json"));
    assert!(ta.iter().any(|(p, _)| p == "config.json"));
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = data.join("manifest.json");
    ok(&["synth", "--n-videos", "8", "--frames", "40", "--out", s(&data)]);

    let vrun = tmp.path().join("video");
    ok(&["train-video", "--manifest", s(&manifest), "--run-dir", s(&vrun), "--epochs", "2"]);
    let exported = ok(&["export-video", "--manifest", s(&manifest), "--checkpoint", s(&vrun)]);
    assert_eq!(exported["videos"], 8);

    let run = tmp.path().join("run");
    let trained = ok(&["train", "--manifest", s(&manifest), "--run-dir", s(&run), "--epochs", "2"]);
    for f in ["config.json", "train_report.json", "checkpoint/index.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let preds = tmp.path().join("preds");
    ok(&["predict", "--manifest", s(&manifest), "--checkpoint", s(&run), "--out", s(&preds)]);
    let report = tmp.path().join("report");
    let eval = ok(&[
        "eval", "--manifest", s(&manifest), "--predictions", s(&preds), "--out", s(&report),
    ]);
    // the reloaded checkpoint scores exactly what training reported
    assert_eq!(eval["overall"], trained["best_validation_correlation"]);
    assert!(report.join("eval_report.json").is_file());
    let csv = fs::read_to_string(report.join("eval_report.csv")).unwrap();
    assert!(csv.starts_with("video_id,expression_00,"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let merged = tmp.path().join("merged");
    let e = ok(&["ensemble", "--inputs", s(&preds), s(&preds), "--out", s(&merged)]);
    assert_eq!(e["models"], 2);
    let again = ok(&["eval", "--manifest", s(&manifest), "--predictions", s(&merged)]);
    assert_eq!(again["overall"], eval["overall"]);
}

#[test]
fn labels_scored_against_themselves_give_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--n-videos", "4", "--frames", "30", "--out", s(&data)]);
    let preds = tmp.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    for e in fs::read_dir(data.join("videos")).unwrap() {
        let dir = e.unwrap().path();
        let id = dir.file_name().unwrap().to_str().unwrap().to_owned();
        fs::copy(dir.join("labels.mgf"), preds.join(format!("{id}.mgf"))).unwrap();
    }
    let r = ok(&[
        "eval", "--manifest", s(&data.join("manifest.json")), "--predictions", s(&preds), "--split", "all",
    ]);
    assert!((r["overall"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(r["videos"], 4);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let (code, line) = fails(&["train", "--no-such-flag"]);
    assert_eq!((code, line["kind"].as_str()), (2, Some("usage")));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epoch": 3}"#).unwrap();
    let (code, line) = fails(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!((code, line["kind"].as_str()), (2, Some("config")));
    assert!(line["message"].as_str().unwrap().contains("epoch"));
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, line) = fails(&[
        "train", "--manifest", s(&tmp.path().join("absent.json")), "--run-dir", s(&tmp.path().join("r")),
    ]);
    assert_eq!((code, line["kind"].as_str()), (3, Some("not_found")));

    let data = tmp.path().join("data");
    ok(&["synth", "--n-videos", "4", "--frames", "30", "--out", s(&data)]);
    let (code, line) = fails(&[
        "train",
        "--manifest",
        s(&data.join("manifest.json")),
        "--run-dir",
        s(&tmp.path().join("r")),
        "--modalities",
        "image,depth",
    ]);
    assert_eq!((code, line["kind"].as_str()), (3, Some("missing_modality")));
}

#[test]
fn divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data)]);
    let (code, line) = fails(&[
        "train",
        "--manifest",
        s(&data.join("manifest.json")),
        "--run-dir",
        s(&tmp.path().join("r")),
        "--learning-rate",
        "1e30",
        "--epochs",
        "5",
    ]);
    assert_eq!((code, line["kind"].as_str()), (4, Some("numerical_abort")));
}

#[test]
fn gradcheck_passes() {
    let r = ok(&["gradcheck"]);
    assert_eq!(r["passed"], true);
}
