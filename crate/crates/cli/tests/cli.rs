mod common;

use std::collections::BTreeSet;
use std::process::Command;

use camofs_core::dataset::{load_annotations, AnnotationSet};
use common::*;

fn ids(set: &AnnotationSet) -> BTreeSet<u64> {
    set.annotations.iter().map(|a| a.id).collect()
}

fn sample(ann: &str, novel: &str, shots: usize, seed: u64, out: &str) {
    let o = camofs(&[
        "sample",
        "--ann",
        ann,
        "--novel-classes",
        novel,
        "--shots",
        &shots.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn three_shot_output_is_inside_five_shot_output() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_set(&random_set(12, 1), dir.path(), "ann.json");
    let (five, three) = (dir.path().join("5.json"), dir.path().join("3.json"));
    sample(path_str(&ann), "1,2,3,class_4", 5, 7, path_str(&five));
    sample(path_str(&ann), "1,2,3,class_4", 3, 7, path_str(&three));
    let five = load_annotations(&five).unwrap();
    let three = load_annotations(&three).unwrap();
    assert!(ids(&three).is_subset(&ids(&five)));
    assert!(!ids(&three).is_empty());
}

#[test]
fn hundred_seed_sweep_keeps_nesting() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_set(&random_set(6, 2), dir.path(), "ann.json");
    let mut nested = 0;
    for seed in 0..100 {
        let mut prev: Option<BTreeSet<u64>> = None;
        let mut ok = true;
        for k in [1, 2, 3, 5] {
            let out = dir.path().join(format!("s{seed}_{k}.json"));
            sample(path_str(&ann), "1,2,3,4,5,6", k, seed, path_str(&out));
            let cur = ids(&load_annotations(&out).unwrap());
            if let Some(p) = &prev {
                ok &= p.is_subset(&cur);
            }
            prev = Some(cur);
        }
        nested += ok as usize;
    }
    assert_eq!(nested, 100);
}

#[test]
fn same_seed_exports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_set(&random_set(8, 3), dir.path(), "ann.json");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    sample(path_str(&ann), "2,4,6", 2, 11, path_str(&a));
    sample(path_str(&ann), "2,4,6", 2, 11, path_str(&b));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn annotation_path_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_set(&random_set(3, 4), dir.path(), "ann.json");
    let out = dir.path().join("o.json");
    let o = Command::new(env!("CARGO_BIN_EXE_camofs"))
        .args([
            "sample",
            "--novel-classes",
            "1",
            "--shots",
            "1",
            "--out",
            path_str(&out),
        ])
        .env("CAMOFS_ANN", &ann)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_annotations(&out).unwrap().annotations.len(), 1);
}

#[test]
fn missing_annotation_file_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("does_not_exist.json");
    for args in [
        vec![
            "sample",
            "--novel-classes",
            "1",
            "--shots",
            "1",
            "--out",
            "x.json",
        ],
        vec!["stats", "--out-dir", "stats"],
        vec!["eval", "--dets", "d.json", "--out", "e.json"],
    ] {
        let mut full = args.clone();
        full.extend(["--ann", path_str(&missing)]);
        let o = camofs(&full);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(path_str(&missing)), "{}", stderr(&o));
    }
}

#[test]
fn unknown_novel_class_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_set(&random_set(3, 5), dir.path(), "ann.json");
    let o = camofs(&[
        "sample",
        "--ann",
        path_str(&ann),
        "--novel-classes",
        "zebra",
        "--shots",
        "1",
        "--out",
        path_str(&dir.path().join("o.json")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("zebra"));
}

fn single_gt() -> AnnotationSet {
    AnnotationSet {
        images: vec![image(1, 100, 100)],
        annotations: vec![annotation(1, 1, 1, [10.0, 10.0, 40.0, 40.0])],
        categories: categories(1),
    }
}

fn eval(
    dir: &std::path::Path,
    gt: &AnnotationSet,
    dets: &str,
    iou_type: &str,
) -> serde_json::Value {
    let ann = write_set(gt, dir, "gt.json");
    let d = dir.join("dets.json");
    std::fs::write(&d, dets).unwrap();
    let out = dir.join("eval.json");
    let o = camofs(&[
        "eval",
        "--ann",
        path_str(&ann),
        "--dets",
        path_str(&d),
        "--iou-type",
        iou_type,
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn perfect_detection_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let dets = r#"[{"image_id": 1, "category_id": 1, "score": 1.0, "bbox": [10, 10, 40, 40],
                   "segmentation": [[10, 10, 50, 10, 50, 50, 10, 50]]}]"#;
    for t in ["bbox", "segm"] {
        let r = eval(dir.path(), &single_gt(), dets, t);
        for k in ["ap", "ap50", "ap75", "ar1"] {
            assert_eq!(r["mean"][k].as_f64().unwrap(), 1.0, "{t} {k}");
        }
    }
}

#[test]
fn empty_detections_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let r = eval(dir.path(), &single_gt(), "[]", "bbox");
    assert_eq!(r["mean"]["ap"].as_f64().unwrap(), 0.0);
}

#[test]
fn precision_envelope_case() {
    let dir = tempfile::tempdir().unwrap();
    let gt = AnnotationSet {
        images: vec![image(1, 100, 100)],
        annotations: vec![annotation(1, 1, 1, [0.0, 0.0, 10.0, 10.0])],
        categories: categories(1),
    };
    // A misses entirely; B overlaps with IoU 60/100 = 0.6
    let dets = r#"[{"image_id": 1, "category_id": 1, "score": 0.9, "bbox": [50, 50, 10, 10]},
                   {"image_id": 1, "category_id": 1, "score": 0.8, "bbox": [0, 0, 10, 6]}]"#;
    let r = eval(dir.path(), &gt, dets, "bbox");
    assert!((r["mean"]["ap50"].as_f64().unwrap() - 0.5).abs() <= 1e-9);
}

#[test]
fn stats_reports_direct_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = AnnotationSet {
        categories: categories(2),
        ..Default::default()
    };
    let mut ann = 1;
    for (img, n) in [(1u64, 1), (2, 1), (3, 2), (4, 5)] {
        set.images.push(image(img, 128, 64));
        for _ in 0..n {
            set.annotations
                .push(annotation(ann, img, 1 + ann % 2, [54.0, 22.0, 20.0, 20.0]));
            ann += 1;
        }
    }
    let p = write_set(&set, dir.path(), "ann.json");
    let out = dir.path().join("stats");
    let o = camofs(&["stats", "--ann", path_str(&p), "--out-dir", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("images=4 instances=9"));
    let h: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("instance_histogram.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(h["counts"]["1"], 2);
    assert_eq!(h["counts"]["2"], 1);
    assert_eq!(h["counts"]["3"], 0);
    assert_eq!(h["counts"]["3+"], 1);
    // every centre is the image midpoint, so only bin (32, 32) is populated
    let grid = std::fs::read_to_string(out.join("center_bias.csv")).unwrap();
    let rows: Vec<Vec<u64>> = grid
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 64);
    assert_eq!(rows[32][32], 9);
    assert_eq!(rows.iter().flatten().sum::<u64>(), 9);
    let res = std::fs::read_to_string(out.join("resolution.csv")).unwrap();
    assert_eq!(res.lines().count(), 5);
    assert!(out.join("class_counts.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn toy_train_writes_report_with_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"steps": 30}"#).unwrap();
    let out = dir.path().join("run");
    let o = camofs(&[
        "toy-train",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("train_report.json")).unwrap())
            .unwrap();
    assert!(r["final_initial_ratio"].as_f64().is_some());
    assert_eq!(r["steps"], 30);
    let csv = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("step,loss,triplet,memory\n"));
}

#[test]
fn toy_train_default_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = camofs(&["toy-train", "--out", path_str(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("steps=200"));
}

#[test]
fn bad_train_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = camofs(&[
        "toy-train",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("broken.json"));
}

#[test]
fn gradcheck_default_reports_no_failures() {
    let o = camofs(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "trials=100 failures=0");
}

#[test]
fn gradcheck_zero_tolerance_fails() {
    let o = camofs(&["gradcheck", "--trials", "5", "--tolerance", "0"]);
    assert!(!o.status.success());
}
