use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxtrack_core::grid::{
    Annotation, Dims, EmbeddingField, EmbeddingKind, InstanceLabeling, VoxelGrid,
};
use voxtrack_core::io;

fn voxtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = voxtrack(args);
    assert!(
        out.status.success(),
        "voxtrack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENE: &str = r#"{
  "dims": [10, 8, 24, 24],
  "n_cells": 2,
  "radius_range": [3, 4],
  "drift_x": [-1, 1],
  "noise_sigma": 0.02,
  "rng_seed": 3
}"#;

fn simulate(dir: &Path) -> String {
    let cfg = dir.join("scene.json");
    fs::write(&cfg, SCENE).unwrap();
    let prefix = dir.join("scene").to_str().unwrap().to_string();
    ok(&["simulate", "--config", s(&cfg), "--out-prefix", &prefix]);
    prefix
}

#[test]
fn simulate_writes_image_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let grid = io::read_volume(Path::new(&format!("{p}.img.vxg"))).unwrap();
    let lab = io::read_labeling(Path::new(&format!("{p}.lbl.vxg"))).unwrap();
    assert_eq!(grid.dims(), Dims::new(10, 8, 24, 24).unwrap());
    assert_eq!(lab.instance_ids(), vec![1, 2]);
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = simulate(a.path());
    let pb = simulate(b.path());
    for ext in ["img.vxg", "lbl.vxg"] {
        assert_eq!(
            fs::read(format!("{pa}.{ext}")).unwrap(),
            fs::read(format!("{pb}.{ext}")).unwrap()
        );
    }
}

#[test]
fn simulate_without_dims_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n_cells": 1, "radius_range": [2, 3]}"#).unwrap();
    let out = voxtrack(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out-prefix",
        s(&dir.path().join("x")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("simulate") && err.contains("dims"), "{err}");
}

fn train(dir: &Path, prefix: &str, name: &str, iterations: &str) -> PathBuf {
    let params = dir.join(name);
    ok(&[
        "train",
        "--img",
        &format!("{prefix}.img.vxg"),
        "--lbl",
        &format!("{prefix}.lbl.vxg"),
        "--out",
        s(&params),
        "--iterations",
        iterations,
        "--seed",
        "5",
    ]);
    params
}

#[test]
fn train_writes_params_and_one_loss_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let params = train(dir.path(), &p, "a.vxp", "4");
    let csv = fs::read_to_string(dir.path().join("a.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,loss");
    assert_eq!(lines.len(), 1 + 4);
    let again = train(dir.path(), &p, "b.vxp", "4");
    assert_eq!(fs::read(&params).unwrap(), fs::read(&again).unwrap());
    assert_eq!(
        csv,
        fs::read_to_string(dir.path().join("b.loss.csv")).unwrap()
    );
}

#[test]
fn train_without_annotation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(8, 2, 8, 8).unwrap();
    let img = dir.path().join("i.vxg");
    let lbl = dir.path().join("l.vxg");
    io::write_volume(&VoxelGrid::new(dims, vec![0.5; dims.len()]).unwrap(), &img).unwrap();
    let lab = InstanceLabeling::background(dims)
        .with_annotation(Annotation::Frames(Default::default()))
        .unwrap();
    io::write_labeling(&lab, &lbl).unwrap();
    let out = voxtrack(&[
        "train",
        "--img",
        s(&img),
        "--lbl",
        s(&lbl),
        "--out",
        s(&dir.path().join("p.vxp")),
        "--iterations",
        "2",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: train:"));
}

/// Runs cluster and sync on `field`, returning the prediction and track paths.
fn cluster_and_sync(dir: &Path, field: &Path) -> (PathBuf, PathBuf) {
    let windows = dir.join("windows");
    ok(&["cluster", "--field", s(field), "--out", s(&windows)]);
    let pred = dir.join("pred.vxg");
    let tracks = dir.join("tracks.txt");
    ok(&[
        "sync",
        "--windows",
        s(&windows),
        "--out",
        &format!("{},{}", s(&pred), s(&tracks)),
    ]);
    (pred, tracks)
}

fn eval(dir: &Path, gt: &str, pred: &Path, tracks: &Path) -> serde_json::Value {
    let report = dir.join("report.json");
    ok(&[
        "eval",
        "--gt",
        gt,
        "--pred",
        s(pred),
        "--tracks",
        s(tracks),
        "--out",
        s(&report),
    ]);
    serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap()
}

fn one_hot_field(gt: &InstanceLabeling) -> EmbeddingField {
    let vectors = gt
        .ids()
        .iter()
        .flat_map(|id| (0..28).map(move |k| if k == *id as usize { 1.0 } else { 0.0 }))
        .collect();
    let fg = gt
        .ids()
        .iter()
        .map(|id| if *id > 0 { 1.0 } else { 0.0 })
        .collect();
    EmbeddingField::new(gt.dims(), EmbeddingKind::Fused28, vectors, fg).unwrap()
}

#[test]
fn perfect_field_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let gt_path = format!("{p}.lbl.vxg");
    let gt = io::read_labeling(Path::new(&gt_path)).unwrap();
    let field = dir.path().join("field.vxe");
    io::write_field(&one_hot_field(&gt), 8, &field).unwrap();
    let (pred, tracks) = cluster_and_sync(dir.path(), &field);
    let report = eval(dir.path(), &gt_path, &pred, &tracks);
    assert_eq!(report["SEG"], 1.0);
    assert_eq!(report["TRA"], 1.0);
    assert_eq!(report["OP"], 1.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("windows/windows.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["windows"].as_array().unwrap().len(), 2);
}

#[test]
fn empty_foreground_gives_background_and_zero_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let gt_path = format!("{p}.lbl.vxg");
    let gt = io::read_labeling(Path::new(&gt_path)).unwrap();
    let field = dir.path().join("field.vxe");
    io::write_field(
        &one_hot_field(&InstanceLabeling::background(gt.dims())),
        8,
        &field,
    )
    .unwrap();
    let (pred, tracks) = cluster_and_sync(dir.path(), &field);
    assert!(io::read_labeling(&pred)
        .unwrap()
        .ids()
        .iter()
        .all(|i| *i == 0));
    let report = eval(dir.path(), &gt_path, &pred, &tracks);
    assert_eq!(report["SEG"], 0.0);
    assert_eq!(report["TRA"], 0.0);
    assert_eq!(report["OP"], 0.0);
}

#[test]
fn eval_identity_and_dims_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let gt_path = format!("{p}.lbl.vxg");
    let gt = io::read_labeling(Path::new(&gt_path)).unwrap();
    let tracks = dir.path().join("gt_tracks.txt");
    io::write_track_table(&voxtrack_core::TrackTable::from_labeling(&gt), &tracks).unwrap();
    let report = eval(dir.path(), &gt_path, Path::new(&gt_path), &tracks);
    let (seg, tra, op) = (
        report["SEG"].as_f64().unwrap(),
        report["TRA"].as_f64().unwrap(),
        report["OP"].as_f64().unwrap(),
    );
    assert_eq!((seg, tra), (1.0, 1.0));
    assert_eq!(op, (seg + tra) / 2.0);

    let other = dir.path().join("small.vxg");
    io::write_labeling(
        &InstanceLabeling::background(Dims::new(2, 2, 2, 2).unwrap()),
        &other,
    )
    .unwrap();
    let out = voxtrack(&[
        "eval",
        "--gt",
        &gt_path,
        "--pred",
        s(&other),
        "--tracks",
        s(&tracks),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: eval:"));
}

#[test]
fn sync_rejects_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxtrack(&["sync", "--windows", s(dir.path()), "--out", "a.vxg,b.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: sync:"));
}

fn write_grid(dir: &Path, dims: Dims, data: Vec<f32>) -> PathBuf {
    let p = dir.join("g.vxg");
    io::write_volume(&VoxelGrid::new(dims, data).unwrap(), &p).unwrap();
    p
}

#[test]
fn render_zero_slice_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(1, 2, 5, 6).unwrap();
    let g = write_grid(dir.path(), dims, vec![0.0; dims.len()]);
    let png = dir.path().join("a.png");
    ok(&[
        "render",
        "--img",
        s(&g),
        "--t",
        "0",
        "--z",
        "1",
        "--out",
        s(&png),
    ]);
    let img = image::open(&png).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (6, 5));
    assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
}

#[test]
fn render_mip_single_bright_voxel() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(2, 3, 4, 4).unwrap();
    let mut data = vec![0.0; dims.len()];
    data[dims.index(1, 2, 1, 3)] = 1.0;
    let g = write_grid(dir.path(), dims, data);
    let png = dir.path().join("m.png");
    ok(&[
        "render",
        "--img",
        s(&g),
        "--t",
        "1",
        "--mip",
        "--out",
        s(&png),
    ]);
    let img = image::open(&png).unwrap().to_rgb8();
    let bright: Vec<(u32, u32)> = img
        .enumerate_pixels()
        .filter(|(_, _, p)| p.0 != [0, 0, 0])
        .map(|(x, y, _)| (x, y))
        .collect();
    assert_eq!(bright, vec![(3, 1)]);
    assert_eq!(img.get_pixel(3, 1).0, [255, 255, 255]);
}

#[test]
fn render_is_deterministic_and_checks_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path());
    let img = format!("{p}.img.vxg");
    let lbl = format!("{p}.lbl.vxg");
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    ok(&[
        "render",
        "--img",
        &img,
        "--lbl",
        &lbl,
        "--t",
        "3",
        "--z",
        "2",
        "--out",
        s(&a),
    ]);
    ok(&[
        "render",
        "--img",
        &img,
        "--lbl",
        &lbl,
        "--t",
        "3",
        "--z",
        "2",
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    for args in [["--t", "10", "--z", "0"], ["--t", "0", "--z", "8"]] {
        let mut all = vec!["render", "--img", &img, "--out", s(&a)];
        all.extend(args);
        let out = voxtrack(&all);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
    }
}
