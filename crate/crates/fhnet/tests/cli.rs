use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fhnet_core::hrv::FEATURE_NAMES;
use fhnet_core::rr::{Dataset, Label};
use tempfile::TempDir;

fn fhnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhnet"))
        .args(args)
        .output()
        .expect("spawn fhnet")
}

fn ok(args: &[&str]) -> Output {
    let out = fhnet(args);
    assert!(
        out.status.success(),
        "fhnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, per_class: usize, segments: usize, seed: u64) -> PathBuf {
    let out = p(dir, name);
    ok(&[
        "synth",
        "--patients-per-class",
        &per_class.to_string(),
        "--segments",
        &segments.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

const SMALL_DEEP: [&str; 14] = [
    "--neurons",
    "1",
    "--hidden",
    "2",
    "--epochs",
    "10",
    "--clamp-frac",
    "0.1",
    "--pretune-budget",
    "3",
    "--minibatch",
    "4",
    "--seed",
    "5",
];

#[test]
fn synth_counts_and_repeats() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.rr", 10, 20, 7);
    let b = synth(&dir, "b.rr", 10, 20, 7);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(Dataset::parse(&text).unwrap().len(), 400);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let out = fhnet(&["synth", "--patients-per-class", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fhnet(&["eval", "--data", "x.rr"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fhnet(&["train", "--data", "x.rr", "--out", "m.json", "--model", "cnn"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let out = fhnet(&["features", "--data", s(&p(&dir, "missing.rr")), "--out", s(&p(&dir, "f.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

fn unfiltered_file(dir: &TempDir) -> PathBuf {
    let data = synth(dir, "d.rr", 2, 2, 3);
    let mut text = fs::read_to_string(&data).unwrap();
    // a constant segment fails the unique-values rule
    let first = Dataset::parse(&text).unwrap().segments()[0].clone();
    let beats = vec!["800"; 75].join(" ");
    let (pid, label) = (first.patient_id, first.label.as_u8());
    text.push_str(&format!("{pid},{label},{pid}_flat,{beats}\n"));
    let path = p(dir, "bad.rr");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn features_header_rows_and_warnings() {
    let dir = TempDir::new().unwrap();
    let data = unfiltered_file(&dir);
    let ds = Dataset::parse(&fs::read_to_string(&data).unwrap()).unwrap();
    let (accepted, rejected) = ds.partition_filtered();
    assert_eq!(rejected.len(), 1);
    let out_csv = p(&dir, "f.csv");
    let out = ok(&["features", "--data", s(&data), "--out", s(&out_csv)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("_flat") && stderr.contains("unique-values"), "{stderr}");
    let csv = fs::read_to_string(&out_csv).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..2], ["segment_id", "label"]);
    assert_eq!(header[2..], FEATURE_NAMES);
    assert_eq!(lines.clone().count(), accepted.len());
    assert!(lines.all(|l| l.split(',').count() == 2 + FEATURE_NAMES.len()));
}

#[test]
fn train_rejects_unfiltered_data_with_listing() {
    let dir = TempDir::new().unwrap();
    let data = unfiltered_file(&dir);
    let out = fhnet(&["train", "--data", s(&data), "--model", "trad", "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("_flat [unique-values]"), "{stderr}");
}

#[test]
fn trad_checkpoint_holds_a_forest() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 3, 3, 1);
    let ck = p(&dir, "rf.json");
    ok(&["train", "--data", s(&data), "--model", "trad", "--out", s(&ck)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(json["model"]["type"], "forest");
    assert_eq!(json["model"]["trees"].as_array().unwrap().len(), 30);
    assert!(json["model"].get("fhn").is_none());
}

#[test]
fn deep_training_clamps_first_epoch_only() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 3, 2, 2);
    let ck = p(&dir, "deep.json");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&ck)];
    args.extend(SMALL_DEEP);
    ok(&args);
    let log = fs::read_to_string(format!("{}.log", s(&ck))).unwrap();
    let clamped: Vec<&str> = log.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(clamped.len(), 10);
    assert_eq!(clamped[0], "true");
    assert!(clamped[1..].iter().all(|c| *c == "false"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(json["model"]["type"], "hybrid");
    assert_eq!(json["model"]["fhn"].as_array().unwrap().len(), 1);
    assert_eq!(json["model"]["layer_sizes"], serde_json::json!([1, 2, 2]));
}

#[test]
fn cv_csv_rows_roc_and_ctni_block() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 6, 3, 4);
    let ds = Dataset::parse(&fs::read_to_string(&data).unwrap()).unwrap();
    let ctni = p(&dir, "ctni.csv");
    let lines: String = ds
        .patients()
        .iter()
        .map(|(id, info)| {
            let v = if info.label == Label::Positive { 1.5 } else { 0.2 };
            format!("{id},{},{v}\n", info.label.as_u8())
        })
        .collect();
    fs::write(&ctni, lines).unwrap();
    let (csv, roc, report, folds) = (p(&dir, "m.csv"), p(&dir, "roc.csv"), p(&dir, "r.jsonl"), p(&dir, "f.txt"));
    ok(&[
        "eval", "--data", s(&data), "--cv", "3", "--model", "trad", "--seed", "2",
        "--csv-out", s(&csv), "--roc-out", s(&roc), "--report", s(&report),
        "--folds-out", s(&folds), "--ctni-file", s(&ctni),
    ]);
    let csv = fs::read_to_string(&csv).unwrap();
    let first: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, ["0", "1", "2", "mean", "std"]);

    let roc = fs::read_to_string(&roc).unwrap();
    let pts: Vec<(f64, f64)> = roc
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (c[0], c[1])
        })
        .collect();
    assert_eq!(pts.first(), Some(&(0.0, 0.0)));
    assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));

    let records: Vec<serde_json::Value> = fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.iter().filter(|r| r["record"] == "fold").count(), 3);
    let block = records.iter().find(|r| r["record"] == "ctni").expect("ctni record");
    assert_eq!(block["threshold"], 0.6);
    assert_eq!(block["n_patients"], 12);
    assert_eq!((block["sensitivity"].as_f64(), block["specificity"].as_f64()), (Some(1.0), Some(1.0)));

    let assigned = fs::read_to_string(&folds).unwrap();
    assert_eq!(assigned.lines().count(), 12);
}

#[test]
fn ctni_label_conflict_is_an_error() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 3, 2, 4);
    let ds = Dataset::parse(&fs::read_to_string(&data).unwrap()).unwrap();
    let (id, info) = ds.patients().iter().next().unwrap();
    let ctni = p(&dir, "c.csv");
    fs::write(&ctni, format!("{id},{},0.9\n", 1 - info.label.as_u8())).unwrap();
    let out = fhnet(&["eval", "--data", s(&data), "--cv", "3", "--model", "trad", "--ctni-file", s(&ctni)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn checkpoint_eval_and_compatibility_errors() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 3, 2, 6);
    let ck = p(&dir, "rf.json");
    ok(&["train", "--data", s(&data), "--model", "trad", "--trees", "5", "--out", s(&ck)]);
    let out = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck)]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.lines().next().unwrap().contains("\"record\":\"fold\""));

    let text = fs::read_to_string(&ck).unwrap();
    let bad = p(&dir, "bad.json");
    fs::write(&bad, text.replace("hrv23-v1", "hrv99-v9")).unwrap();
    let out = fhnet(&["eval", "--data", s(&data), "--checkpoint", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not fit"));

    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["model"]["n_features"] = 5.into();
    fs::write(&bad, json.to_string()).unwrap();
    let out = fhnet(&["eval", "--data", s(&data), "--checkpoint", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not fit"));

    json["version"] = 99.into();
    fs::write(&bad, json.to_string()).unwrap();
    let out = fhnet(&["eval", "--data", s(&data), "--checkpoint", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported checkpoint"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.rr", 3, 2, 9);
    let mut outputs = Vec::new();
    for run in 0..2 {
        let f = |n: &str| p(&dir, &format!("{run}_{n}"));
        ok(&["features", "--data", s(&data), "--out", s(&f("feat.csv"))]);
        let (deep, trace) = (f("deep.json"), f("trace.csv"));
        let mut args = vec!["train", "--data", s(&data), "--out", s(&deep)];
        args.extend(["--trace", s(&trace)]);
        args.extend(SMALL_DEEP);
        ok(&args);
        ok(&["eval", "--data", s(&data), "--checkpoint", s(&deep), "--report", s(&f("r.jsonl"))]);
        ok(&[
            "eval", "--data", s(&data), "--cv", "3", "--model", "trad", "--threads", "2",
            "--csv-out", s(&f("cv.csv")), "--report", s(&f("cv.jsonl")),
        ]);
        let names = ["feat.csv", "deep.json", "deep.json.log", "trace.csv", "r.jsonl", "cv.csv", "cv.jsonl"];
        outputs.push(names.map(|n| fs::read(f(n)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
