use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndp_cli::provenance::dir_digest;
use ndp_core::io::{load_point_cloud, save_point_cloud, save_scores};
use ndp_core::metrics::{Report, METRIC_KEYS};
use ndp_core::{PointCloud, ScoreField};

fn ndp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ndp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth", "--seed", "5", "--scenes", "3", "--points", "1500", "--anomalies", "1", "--out", s(dir)]);
    }
    assert_eq!(dir_digest(&a).unwrap(), dir_digest(&b).unwrap());
    assert_eq!(fs::read(a.join("provenance.txt")).unwrap(), fs::read(b.join("provenance.txt")).unwrap());
    assert_eq!(fs::read_dir(a.join("velodyne")).unwrap().count(), 3);
}

#[test]
fn eval_without_threshold_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ndp(&["eval", "--labels", s(tmp.path()), "--scores", s(tmp.path()), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ndp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ndp(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_inputs_are_contract_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = ndp(&["raise", "--data", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "raise.rho = 0\n").unwrap();
    let out = ndp(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(&cfg, "train.learning_rate = 1\n").unwrap();
    let out = ndp(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_reports_every_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    ok(&["synth", "--seed", "1", "--scenes", "10", "--points", "2000", "--out", s(&p("train"))]);
    ok(&["raise", "--data", s(&p("train")), "--out", s(&p("raised")), "--seed", "2"]);
    ok(&["train", "--data", s(&p("raised")), "--out", s(&p("model.ndpm")), "--epochs", "2", "--lr", "0.001"]);
    ok(&["synth", "--seed", "9", "--scenes", "4", "--points", "2000", "--anomalies", "2", "--out", s(&p("test"))]);
    ok(&["score", "--data", s(&p("test")), "--model", s(&p("model.ndpm")), "--out", s(&p("scores"))]);
    ok(&["eval", "--labels", s(&p("test")), "--scores", s(&p("scores")), "--gamma-from-tpr", "0.95", "--out", s(&p("report.txt"))]);

    let report = Report::read(p("report.txt")).unwrap();
    for key in METRIC_KEYS {
        let v = report.get_f64(key).unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(report.get("count.scans"), Some("4"));
    assert_eq!(report.get("seed.data"), Some("9"));
    assert_eq!(report.get("seed.train"), Some("0"));
    assert_eq!(report.get("eval.gamma_source"), Some("tpr-0.95-evaluation-set"));
    let text = fs::read_to_string(p("report.txt")).unwrap();
    assert!(!text.contains(s(tmp.path())), "report leaks a path");

    let scores: Vec<PathBuf> = fs::read_dir(p("scores")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(scores.iter().filter(|f| f.extension().is_some_and(|e| e == "score")).count(), 4);
}

fn png_size(path: &Path) -> (u32, u32) {
    let bytes = fs::read(path).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    let be = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    (be(16), be(20))
}

#[test]
fn export_map_writes_raster_and_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [3.0, 1.0, 0.5], [1.5, 0.5, 0.0]], None).unwrap();
    save_point_cloud(tmp.path().join("c.bin"), &cloud).unwrap();
    save_scores(tmp.path().join("c.score"), &ScoreField::new(vec![0.1, 0.9, 0.5]).unwrap()).unwrap();
    let out = tmp.path().join("map");
    ok(&[
        "export-map",
        "--scores",
        s(&tmp.path().join("c.score")),
        "--cloud",
        s(&tmp.path().join("c.bin")),
        "--out",
        s(&out),
        "--resolution",
        "0.5",
    ]);
    assert_eq!(png_size(&tmp.path().join("map.png")), (7, 3));
    let ply = fs::read_to_string(tmp.path().join("map.ply")).unwrap();
    assert!(ply.starts_with("ply\n"));
    assert_eq!(ply.split("end_header\n").nth(1).unwrap().lines().count(), 3);
    assert_eq!(load_point_cloud(tmp.path().join("c.bin")).unwrap().points(), cloud.points());
}

#[test]
fn constant_scores_render_in_one_color() {
    let tmp = tempfile::tempdir().unwrap();
    let pts: Vec<[f32; 3]> = (0..40).map(|i| [(i % 8) as f32 * 0.3, (i / 8) as f32 * 0.3, 0.0]).collect();
    save_point_cloud(tmp.path().join("c.bin"), &PointCloud::new(pts, None).unwrap()).unwrap();
    save_scores(tmp.path().join("c.score"), &ScoreField::new(vec![2.5; 40]).unwrap()).unwrap();
    ok(&["export-map", "--scores", s(&tmp.path().join("c.score")), "--cloud", s(&tmp.path().join("c.bin")), "--out", s(&tmp.path().join("m"))]);
    let img = image::open(tmp.path().join("m.png")).unwrap().to_rgb8();
    let colors: std::collections::BTreeSet<[u8; 3]> = img.pixels().map(|p| p.0).filter(|c| *c != [0, 0, 0]).collect();
    assert_eq!(colors.len(), 1);
}

#[test]
fn mismatched_scores_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    save_point_cloud(tmp.path().join("c.bin"), &PointCloud::new(vec![[0.0; 3]; 3], None).unwrap()).unwrap();
    save_scores(tmp.path().join("c.score"), &ScoreField::new(vec![1.0; 2]).unwrap()).unwrap();
    let out = ndp(&["export-map", "--scores", s(&tmp.path().join("c.score")), "--cloud", s(&tmp.path().join("c.bin")), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
}
