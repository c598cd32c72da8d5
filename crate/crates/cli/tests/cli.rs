use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sidewalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidewalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_succeeds_and_bad_usage_exits_one() {
    assert_eq!(code(&sidewalk(&["--help"])), 0);
    assert_eq!(code(&sidewalk(&["frobnicate"])), 1);
    assert_eq!(code(&sidewalk(&["synth"])), 1);
    assert_eq!(code(&sidewalk(&["synth", "--out", "x", "--train", "many"])), 1);
    assert_eq!(code(&sidewalk(&["train-vae", "--data", "d", "--out", "b", "--preset", "huge"])), 1);
}

#[test]
fn flag_values_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let r = sidewalk(&["synth", "--out", p(&out), "--contamination", "1.5"]);
    assert_eq!(code(&r), 1);
    let r = sidewalk(&["calibrate", "--bundle", "b.vocs", "--data", "d", "--quantile", "2"]);
    assert_eq!(code(&r), 1);
    let r = sidewalk(&["train-ocsvm", "--bundle", "b", "--data", "d", "--out", "o", "--nu", "0"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn missing_and_corrupt_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let r = sidewalk(&["train-vae", "--data", p(&dir.path().join("nope")), "--out", "b.vocs"]);
    assert_eq!(code(&r), 2);
    let bad = dir.path().join("bad.vocs");
    fs::write(&bad, b"NOPE\x01\x00\x00\x00").unwrap();
    let r = sidewalk(&["calibrate", "--bundle", p(&bad), "--data", p(dir.path())]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("error"));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = sidewalk(&["train-vae", "--data", p(&empty), "--out", p(&dir.path().join("b.vocs"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let bundle = dir.path().join("model.vocs");
    let r = sidewalk(&[
        "synth", "--out", p(&corpus), "--train", "24", "--ocsvm", "16", "--test-normal", "6",
        "--test-nonhazard", "3", "--test-hazard", "3", "--width", "64", "--height", "64", "--seed", "4",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read_dir(corpus.join("test/masks")).unwrap().count(), 6);

    let r = sidewalk(&[
        "train-vae", "--data", p(&corpus.join("train")), "--preset", "desk", "--epochs", "2",
        "--batch", "8", "--lr", "0.001", "--seed", "1", "--out", p(&bundle),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let log = stdout(&r);
    assert!(log.starts_with("epoch\ttotal\trecon\tkl\n1\t"));
    assert_eq!(log.lines().count(), 3);

    let r = sidewalk(&[
        "calibrate", "--bundle", p(&bundle), "--data", p(&corpus.join("train")), "--quantile", "0.5",
        "--samples", "2", "--seed", "3", "--write",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let threshold: f64 = stdout(&r).trim().parse().unwrap();
    assert!(threshold > 0.0);

    // infer needs the SVM section
    let alerts = dir.path().join("alerts.csv");
    let r = sidewalk(&["infer", "--bundle", p(&bundle), "--frames", p(&corpus.join("test")), "--alerts", p(&alerts)]);
    assert_eq!(code(&r), 2);

    let r = sidewalk(&[
        "train-ocsvm", "--bundle", p(&bundle), "--data", p(&corpus.join("ocsvm")), "--nu", "0.5",
        "--gamma", "0.5", "--pca-var", "0.95", "--out", p(&bundle),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let heatmaps = dir.path().join("heat");
    let test_dir = corpus.join("test");
    let args = [
        "infer", "--bundle", p(&bundle), "--threshold", "1", "--frames", p(&test_dir),
        "--alerts", p(&alerts), "--heatmaps", p(&heatmaps), "--seed", "7",
    ];
    let r = sidewalk(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let first = fs::read_to_string(&alerts).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "frame,kind,vae_score,ocsvm_value,bbox_x,bbox_y,bbox_w,bbox_h");
    assert_eq!(lines.len(), 13);
    // threshold 1 flags every frame, so each one went through the SVM
    assert!(lines[1..].iter().all(|l| l.split(',').nth(3).is_some_and(|v| !v.is_empty())));
    let hazards = lines[1..].iter().filter(|l| l.split(',').nth(1) == Some("hazard")).count();
    let written = fs::read_dir(&heatmaps).map(|d| d.count()).unwrap_or(0);
    assert_eq!(written, hazards);
    assert_eq!(code(&sidewalk(&args)), 0);
    assert_eq!(fs::read_to_string(&alerts).unwrap(), first, "same seed, same alerts");

    let roc = dir.path().join("roc.csv");
    for mode in ["vae-only", "hybrid"] {
        let r = sidewalk(&[
            "eval", "--bundle", p(&bundle), "--data", p(&corpus.join("test")), "--labels",
            p(&corpus.join("test/labels.csv")), "--roc", p(&roc), "--mode", mode, "--seed", "7",
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        let text = stdout(&r);
        assert!(text.contains("auc: "), "{text}");
        let cm = text.lines().find(|l| l.starts_with("cm,")).unwrap();
        let cells: Vec<u64> = cm.split(',').skip(1).take(4).map(|v| v.parse().unwrap()).collect();
        assert_eq!(cells.iter().sum::<u64>(), 12);
        let roc_text = fs::read_to_string(&roc).unwrap();
        assert!(roc_text.starts_with("threshold,fpr,tpr\n"));
        assert_eq!(roc_text.lines().count(), 51);
    }
}
