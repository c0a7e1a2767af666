use voxtrack_core::clustering::MeanShiftConfig;
use voxtrack_core::io;
use voxtrack_core::metrics::{seg_score, tra_score, AogmWeights};
use voxtrack_core::pipeline::segment_and_track;
use voxtrack_core::sync::sync_labeling;
use voxtrack_core::synth::{generate, SceneConfig};
use voxtrack_core::{EmbeddingField, EmbeddingKind, InstanceLabeling, TrackTable};

fn scene(seed: u64) -> SceneConfig {
    let mut cfg = SceneConfig::new([12, 8, 32, 32], 3, [3.0, 4.0], seed);
    cfg.drift_x = [-0.5, 0.5];
    cfg.noise_sigma = 0.02;
    cfg
}

/// Embedding that puts every instance on its own axis, with exact foreground.
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
fn generated_scene_round_trips_through_files() {
    let (grid, gt) = generate(&scene(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl, trk) = (
        dir.path().join("a.vxg"),
        dir.path().join("b.vxg"),
        dir.path().join("c.txt"),
    );
    io::write_volume(&grid, &img).unwrap();
    io::write_labeling(&gt, &lbl).unwrap();
    let table = TrackTable::from_labeling(&gt);
    io::write_track_table(&table, &trk).unwrap();
    assert_eq!(io::read_volume(&img).unwrap().data(), grid.data());
    assert_eq!(io::read_labeling(&lbl).unwrap(), gt);
    assert_eq!(io::read_track_table(&trk).unwrap(), table);
}

#[test]
fn perfect_embedding_reproduces_ground_truth() {
    for seed in [4, 5, 6] {
        let (_, gt) = generate(&scene(seed)).unwrap();
        let (pred, table) =
            segment_and_track(&one_hot_field(&gt), 8, &MeanShiftConfig::default()).unwrap();
        assert_eq!(seg_score(&gt, &pred).unwrap(), 1.0);
        assert_eq!(
            tra_score(&gt, &pred, &table, &AogmWeights::default()).unwrap(),
            1.0
        );
        assert_eq!(table.len(), 3);
        assert!(table.rows().iter().all(|r| (r.t_begin, r.t_end) == (0, 11)));
    }
}

#[test]
fn z_sync_repairs_a_relabeled_slice() {
    let (_, gt) = generate(&scene(7)).unwrap();
    let d = gt.dims();
    let mut broken = gt.clone();
    // give cell 1 a stray id in one slice of frame 5
    let t = 5;
    let z = (0..d.z)
        .find(|&z| gt.slice(t, z).iter().filter(|i| **i == 1).count() > 4 && z != 0)
        .unwrap();
    for (i, id) in gt.slice(t, z).iter().enumerate() {
        if *id == 1 {
            broken.ids_mut()[d.slice_offset(t, z) + i] = 42;
        }
    }
    assert_eq!(sync_labeling(&broken), gt);
}
