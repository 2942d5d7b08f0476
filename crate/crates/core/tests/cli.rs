use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fluoroseg::coco::{read_results, CocoDataset};
use fluoroseg::netpbm::GrayImage;
use fluoroseg::segment::ProtoModel;

fn fluoroseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluoroseg")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    fluoroseg(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, n: usize, size: usize) {
    let out = fluoroseg(&["generate", "--n", &n.to_string(), "--size", &size.to_string(), "--seed", "3", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["generate", "--n", "many"]), 2);
    for sub in ["generate", "split", "train", "segment", "eval", "video", "bench"] {
        assert_eq!(code(&[sub, "--help"]), 0, "{sub}");
    }
}

#[test]
fn generate_is_deterministic_and_valid() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), 10, 64);
    generate(b.path(), 10, 64);
    let ja = fs::read(a.path().join("annotations.json")).unwrap();
    assert_eq!(ja, fs::read(b.path().join("annotations.json")).unwrap());
    let ds = CocoDataset::read(a.path().join("annotations.json")).unwrap();
    assert_eq!(ds.images.len(), 10);
    assert_eq!(ds.info.as_ref().unwrap().seed, 3);
    assert_eq!(fs::read_dir(a.path().join("images")).unwrap().count(), 10);
}

#[test]
fn generate_rejects_bad_mix() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluoroseg(&["generate", "--n", "4", "--mix", "clean=0.5,overlap=0.3", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    let data = dir.path().join("data");
    fs::write(&cfg, format!(r#"{{"n": 3, "size": 32, "out": "{}", "seed": 9}}"#, s(&data))).unwrap();
    let out = fluoroseg(&["generate", "--config", s(&cfg), "--n", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = String::from_utf8_lossy(&out.stderr);
    assert!(echoed.contains(r#""n":5"#) && echoed.contains(r#""seed":9"#), "{echoed}");
    let ds = CocoDataset::read(data.join("annotations.json")).unwrap();
    assert_eq!(ds.images.len(), 5);
    assert_eq!(ds.images[0].width, 32);

    // flag spelling with dashes is accepted in the file; unknown keys are not
    let ann = data.join("annotations.json");
    fs::write(&cfg, format!(r#"{{"train-fraction": 0.6, "data": "{}"}}"#, s(&ann))).unwrap();
    assert_eq!(code(&["split", "--config", s(&cfg)]), 0);
    assert_eq!(CocoDataset::read(data.join("train.json")).unwrap().images.len(), 3);
    fs::write(&cfg, r#"{"n": 3, "colour": "blue"}"#).unwrap();
    assert_eq!(code(&["generate", "--config", s(&cfg), "--out", s(&data)]), 2);
    assert_eq!(code(&["generate", "--config", s(&dir.path().join("missing.json")), "--out", s(&data)]), 2);
}

#[test]
fn split_writes_disjoint_halves() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 10, 32);
    let ann = dir.path().join("annotations.json");
    assert_eq!(code(&["split", "--data", s(&ann), "--seed", "1"]), 0);
    let train = CocoDataset::read(dir.path().join("train.json")).unwrap();
    let test = CocoDataset::read(dir.path().join("test.json")).unwrap();
    assert_eq!((train.images.len(), test.images.len()), (9, 1));
    assert!(train.images.iter().all(|i| test.image(i.id).is_none()));
    assert_eq!(code(&["split", "--data", s(&ann), "--train-fraction", "1.5"]), 2);
}

#[test]
fn train_zero_iterations_matches_fresh_init() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 4, 64);
    let ann = dir.path().join("annotations.json");
    let ckpt = dir.path().join("m.fseg");
    assert_eq!(code(&["train", "--data", s(&ann), "--iters", "0", "--seed", "5", "--out-ckpt", s(&ckpt)]), 0);
    assert_eq!(ProtoModel::load(&ckpt).unwrap().params(), ProtoModel::init(5).params());
    assert_eq!(fs::read_to_string(dir.path().join("m.csv")).unwrap(), "iteration,loss\n");
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 4, 64);
    let ann = dir.path().join("annotations.json");
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let args = ["train", "--data", s(&ann), "--iters", "5", "--batch", "2", "--out-ckpt", s(&ckpt)];
        assert_eq!(code(&args), 0);
        fs::read(ckpt).unwrap()
    };
    assert_eq!(run("a.fseg"), run("b.fseg"));
    let trace = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);
}

#[test]
fn train_rejects_indivisible_frames() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 2, 60);
    let ann = dir.path().join("annotations.json");
    let ckpt = dir.path().join("m.fseg");
    assert_eq!(code(&["train", "--data", s(&ann), "--iters", "1", "--out-ckpt", s(&ckpt)]), 2);
}

#[test]
fn segment_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 3, 128);
    let ann = dir.path().join("annotations.json");
    let preds = dir.path().join("preds.json");
    assert_eq!(code(&["segment", "--input", s(&ann), "--out", s(&preds)]), 0);
    assert!(!read_results(&preds).unwrap().is_empty());

    let frame = dir.path().join("images/00001.pgm");
    let one = dir.path().join("one.json");
    assert_eq!(code(&["segment", "--input", s(&frame), "--out", s(&one)]), 0);
    assert!(!read_results(&one).unwrap().is_empty());

    let out = fluoroseg(&["eval", "--truth", s(&ann), "--preds", s(&preds), "--class-agnostic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("0.95") && table.contains("mask"), "{table}");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("preds.report.json")).unwrap()).unwrap();
    assert!(report["mask"]["0.50"].as_f64().unwrap() > 90.0);
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 3, 64);
    let ann = dir.path().join("annotations.json");
    let ds = CocoDataset::read(&ann).unwrap();
    let results: Vec<_> = ds
        .annotations
        .iter()
        .map(|a| fluoroseg::coco::CocoResult {
            image_id: a.image_id,
            category_id: a.category_id,
            score: 1.0,
            bbox: a.bbox,
            segmentation: a.segmentation.clone(),
        })
        .collect();
    let preds = dir.path().join("perfect.json");
    fluoroseg::coco::write_results(&preds, &results).unwrap();
    let out = fluoroseg(&["eval", "--truth", s(&ann), "--preds", s(&preds)]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    let box_row = table.lines().find(|l| l.starts_with("box")).unwrap();
    assert_eq!(box_row.matches("100.00").count(), 10, "{table}");

    // predictions on an image the truth does not have
    let stray = dir.path().join("stray.json");
    let mut bad = results.clone();
    bad[0].image_id = 999;
    fluoroseg::coco::write_results(&stray, &bad).unwrap();
    assert_eq!(code(&["eval", "--truth", s(&ann), "--preds", s(&stray)]), 2);
}

#[test]
fn video_keeps_frame_order() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 3, 64);
    let out = dir.path().join("run");
    assert_eq!(code(&["video", "--frames", s(&dir.path().join("images")), "--out", s(&out), "--overlay"]), 0);
    let results = read_results(out.join("detections.json")).unwrap();
    let ids: Vec<u64> = results.iter().map(|r| r.image_id).collect();
    assert!(ids.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(ids.iter().collect::<std::collections::BTreeSet<_>>().len(), 3);
    assert_eq!(fs::read_dir(out.join("overlays")).unwrap().count(), 3);
}

#[test]
fn runtime_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 0..2 {
        GrayImage::filled(60, 60, 100).write_pgm(frames.join(format!("{i}.pgm"))).unwrap();
    }
    let ckpt = dir.path().join("m.fseg");
    ProtoModel::zeros().save(&ckpt).unwrap();
    let out = dir.path().join("o");
    let args = ["video", "--frames", s(&frames), "--out", s(&out), "--backend", "proto", "--ckpt", s(&ckpt)];
    assert_eq!(code(&args), 3);
}

#[test]
fn missing_checkpoint_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 1, 64);
    let frame = dir.path().join("images/00001.pgm");
    let args = ["segment", "--input", s(&frame), "--out", "x.json", "--backend", "proto", "--ckpt", "/nonexistent.fseg"];
    assert_eq!(code(&args), 2);
    assert_eq!(code(&["segment", "--input", s(&frame), "--out", "x.json", "--backend", "proto"]), 2);
    assert_eq!(code(&["segment", "--input", s(&frame), "--out", "x.json", "--backend", "magic"]), 2);
}

#[test]
fn bench_reports_fps() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.json");
    let args = ["bench", "--backend", "threshold", "--size", "64", "--frames", "100", "--out", s(&report)];
    assert_eq!(code(&args), 0);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(json["fps"].as_f64().unwrap() > 0.0);
    assert_eq!(json["frames"], 100);
    assert_eq!(code(&["bench", "--frames", "3"]), 2);
}
