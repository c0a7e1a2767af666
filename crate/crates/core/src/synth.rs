//! Synthetic videos of drifting ellipsoidal cells with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Annotation, Dims, InstanceLabeling, VoxelGrid};

const PLACEMENT_ATTEMPTS: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// `[T, Z, Y, X]`.
    pub dims: [usize; 4],
    pub n_cells: usize,
    /// Semi-axis range in voxels, sampled per axis and cell.
    pub radius_range: [f64; 2],
    /// Drift ranges in voxels per frame.
    #[serde(default)]
    pub drift_z: [f64; 2],
    #[serde(default)]
    pub drift_y: [f64; 2],
    #[serde(default)]
    pub drift_x: [f64; 2],
    #[serde(default = "default_cell_intensity")]
    pub cell_intensity: [f64; 2],
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Minimum surface gap between cells in voxels.
    #[serde(default = "default_clearance")]
    pub min_clearance: f64,
    /// Fraction of frames (from the start) that carry labels.
    #[serde(default = "default_density")]
    pub annotation_density: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_cell_intensity() -> [f64; 2] {
    [0.6, 1.0]
}

fn default_background() -> f64 {
    0.1
}

fn default_clearance() -> f64 {
    2.0
}

fn default_density() -> f64 {
    1.0
}

impl SceneConfig {
    /// A scene with default intensities, no drift or noise, and full annotation.
    pub fn new(dims: [usize; 4], n_cells: usize, radius_range: [f64; 2], rng_seed: u64) -> Self {
        SceneConfig {
            dims,
            n_cells,
            radius_range,
            drift_z: [0.0; 2],
            drift_y: [0.0; 2],
            drift_x: [0.0; 2],
            cell_intensity: default_cell_intensity(),
            background: default_background(),
            noise_sigma: 0.0,
            min_clearance: default_clearance(),
            annotation_density: default_density(),
            rng_seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SceneConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let [t, z, y, x] = self.dims;
        Dims::new(t, z, y, x)?;
        if self.n_cells == 0 {
            return bad("n_cells must be ≥ 1".into());
        }
        let [rlo, rhi] = self.radius_range;
        if !(rlo >= 2.0 && rlo <= rhi) {
            return bad(format!(
                "radius range {rlo}..{rhi} must satisfy 2 ≤ lo ≤ hi"
            ));
        }
        // a flat cell fits when it is thinner than the volume
        if let Some(d) = [z, y, x].iter().find(|d| 2.0 * rlo + 1.0 > **d as f64) {
            return bad(format!(
                "cells of radius {rlo} do not fit an axis of {d} voxels"
            ));
        }
        for (axis, [lo, hi]) in [
            ("z", self.drift_z),
            ("y", self.drift_y),
            ("x", self.drift_x),
        ] {
            if !(lo <= hi) || lo.abs().max(hi.abs()) > rlo {
                return bad(format!(
                    "drift_{axis} {lo}..{hi} must be ordered and at most the minimum radius"
                ));
            }
        }
        let [ilo, ihi] = self.cell_intensity;
        if !(0.0 <= ilo && ilo <= ihi && ihi <= 1.0) || !(0.0..=1.0).contains(&self.background) {
            return bad("intensities must lie in [0, 1]".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be ≥ 0".into());
        }
        if !(self.min_clearance >= 0.0) {
            return bad("min_clearance must be ≥ 0".into());
        }
        if !(self.annotation_density > 0.0 && self.annotation_density <= 1.0) {
            return bad("annotation_density must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// `(z, y, x)` at t = 0.
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub drift: [f64; 3],
    pub intensity: f64,
}

impl Cell {
    /// Center at frame `t`, clamped so the cell stays inside the volume.
    pub fn center_at(&self, t: usize, extent: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| {
            let lo = self.radii[a];
            let hi = extent[a] as f64 - 1.0 - self.radii[a];
            (self.center[a] + self.drift[a] * t as f64).clamp(lo, hi.max(lo))
        })
    }

    fn bound(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    fn contains(&self, c: [f64; 3], p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - c[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Places the cells; each must keep `min_clearance` from all earlier cells at
/// every frame, using bounding spheres.
pub fn place_cells(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let [frames, z, y, x] = cfg.dims;
    let extent = [z, y, x];
    let mut cells: Vec<Cell> = Vec::with_capacity(cfg.n_cells);
    for index in 0..cfg.n_cells {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radii: [f64; 3] = std::array::from_fn(|a| {
                uniform(rng, cfg.radius_range).min((extent[a] as f64 - 1.0) / 2.0)
            });
            let center: [f64; 3] = std::array::from_fn(|a| {
                uniform(rng, [radii[a], extent[a] as f64 - 1.0 - radii[a]])
            });
            let drift = [
                uniform(rng, cfg.drift_z),
                uniform(rng, cfg.drift_y),
                uniform(rng, cfg.drift_x),
            ];
            let intensity = uniform(rng, cfg.cell_intensity);
            let cand = Cell {
                center,
                radii,
                drift,
                intensity,
            };
            let clear = cells.iter().all(|other| {
                (0..frames).all(|t| {
                    let a = cand.center_at(t, extent);
                    let b = other.center_at(t, extent);
                    let d = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
                    d - cand.bound() - other.bound() >= cfg.min_clearance
                })
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        cells.push(placed.ok_or(Error::Placement {
            cell: index,
            attempts: PLACEMENT_ATTEMPTS,
        })?);
    }
    Ok(cells)
}

/// Renders the scene: intensities with clipped Gaussian noise and the exact
/// labeling (cell `i` has id `i + 1` in every frame). Frames past the
/// annotated prefix are left unlabeled.
pub fn generate(cfg: &SceneConfig) -> Result<(VoxelGrid, InstanceLabeling)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let cells = place_cells(cfg, &mut rng)?;
    let [t_n, z_n, y_n, x_n] = cfg.dims;
    let dims = Dims::new(t_n, z_n, y_n, x_n)?;
    let extent = [z_n, y_n, x_n];
    let noise =
        Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let annotated = ((cfg.annotation_density * t_n as f64).ceil() as usize).clamp(1, t_n);

    let mut data = Vec::with_capacity(dims.len());
    let mut ids = Vec::with_capacity(dims.len());
    for t in 0..t_n {
        let centers: Vec<[f64; 3]> = cells.iter().map(|c| c.center_at(t, extent)).collect();
        for z in 0..z_n {
            for y in 0..y_n {
                for x in 0..x_n {
                    let p = [z as f64, y as f64, x as f64];
                    let hit = cells
                        .iter()
                        .zip(&centers)
                        .position(|(c, at)| c.contains(*at, p));
                    let base = hit.map_or(cfg.background, |i| cells[i].intensity);
                    let value = if cfg.noise_sigma > 0.0 {
                        base + noise.sample(&mut rng)
                    } else {
                        base
                    };
                    data.push(value.clamp(0.0, 1.0) as f32);
                    ids.push(if t < annotated {
                        hit.map_or(0, |i| i as u32 + 1)
                    } else {
                        0
                    });
                }
            }
        }
    }
    let annotation = if annotated == t_n {
        Annotation::All
    } else {
        Annotation::Frames((0..annotated).collect())
    };
    let grid = VoxelGrid::new(dims, data)?;
    let labeling = InstanceLabeling::new(dims, ids)?.with_annotation(annotation)?;
    Ok((grid, labeling))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid_x(labeling: &InstanceLabeling, t: usize, id: u32) -> f64 {
        let d = labeling.dims();
        let xs: Vec<f64> = (0..d.volume_len())
            .filter(|i| labeling.volume(t)[*i] == id)
            .map(|i| (i % d.x) as f64)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn single_static_cell_gives_identical_frames() {
        let cfg = SceneConfig::new([4, 8, 16, 16], 1, [3.0, 4.0], 1);
        let (grid, lab) = generate(&cfg).unwrap();
        let v = grid.dims().volume_len();
        for t in 1..4 {
            assert_eq!(&grid.data()[t * v..(t + 1) * v], &grid.data()[..v]);
            assert_eq!(lab.volume(t), lab.volume(0));
        }
        assert_eq!(lab.instance_ids(), vec![1]);
    }

    #[test]
    fn same_seed_same_bits() {
        let mut cfg = SceneConfig::new([3, 6, 24, 24], 3, [2.0, 3.0], 7);
        cfg.noise_sigma = 0.05;
        cfg.drift_x = [-1.0, 1.0];
        let (a, la) = generate(&cfg).unwrap();
        let (b, lb) = generate(&cfg).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(la, lb);
    }

    #[test]
    fn drift_moves_centroids() {
        let mut cfg = SceneConfig::new([4, 8, 40, 60], 3, [3.0, 4.0], 3);
        cfg.drift_x = [1.0, 1.0];
        let (_, lab) = generate(&cfg).unwrap();
        let cells = place_cells(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for id in 1..=3u32 {
            let c = &cells[id as usize - 1];
            let unclamped = c.center[2] + 3.0 <= 60.0 - 1.0 - c.radii[2];
            for t in 0..3 {
                let step = centroid_x(&lab, t + 1, id) - centroid_x(&lab, t, id);
                if unclamped {
                    assert!((step - 1.0).abs() <= 0.5, "id {id} moved {step}");
                }
            }
        }
    }

    #[test]
    fn noise_free_scene_is_two_valued_and_consistent() {
        let mut cfg = SceneConfig::new([2, 8, 24, 24], 2, [3.0, 3.0], 4);
        cfg.cell_intensity = [0.8, 0.8];
        let (grid, lab) = generate(&cfg).unwrap();
        for (v, id) in grid.data().iter().zip(lab.ids()) {
            assert_eq!(*v, if *id == 0 { 0.1 } else { 0.8 });
        }
    }

    #[test]
    fn ids_persist_and_overlap_over_time() {
        for seed in 0..10 {
            let mut cfg = SceneConfig::new([6, 10, 32, 32], 3, [2.5, 4.0], seed);
            cfg.drift_x = [-2.0, 2.0];
            cfg.drift_y = [-2.0, 2.0];
            cfg.drift_z = [-0.5, 0.5];
            let (_, lab) = generate(&cfg).unwrap();
            for id in 1..=3u32 {
                for t in 0..5 {
                    let both = lab
                        .volume(t)
                        .iter()
                        .zip(lab.volume(t + 1))
                        .filter(|(a, b)| **a == id && **b == id)
                        .count();
                    assert!(
                        both > 0,
                        "seed {seed} id {id} lost between {t} and {}",
                        t + 1
                    );
                }
            }
        }
    }

    #[test]
    fn sparse_annotation_prefix() {
        let mut cfg = SceneConfig::new([8, 6, 16, 16], 1, [2.0, 3.0], 5);
        cfg.annotation_density = 0.25;
        let (_, lab) = generate(&cfg).unwrap();
        assert_eq!(
            lab.annotation(),
            &Annotation::Frames([0, 1].into_iter().collect())
        );
        assert!(lab.volume(2).iter().all(|i| *i == 0));
        assert!(lab.volume(1).contains(&1));
    }

    #[test]
    fn impossible_scenes_fail() {
        let cfg = SceneConfig::new([1, 8, 12, 12], 30, [3.0, 3.0], 0);
        assert!(matches!(
            generate(&cfg),
            Err(Error::Placement {
                attempts: 1_000,
                ..
            })
        ));
        let mut fast = SceneConfig::new([1, 8, 32, 32], 1, [2.0, 3.0], 0);
        fast.drift_x = [0.0, 2.5];
        assert!(matches!(generate(&fast), Err(Error::InvalidConfig(_))));
        assert!(SceneConfig::from_json(r#"{"n_cells": 1, "radius_range": [2, 3]}"#).is_err());
    }

    #[test]
    fn json_defaults() {
        let cfg =
            SceneConfig::from_json(r#"{"dims":[2,6,16,16],"n_cells":1,"radius_range":[2,3]}"#)
                .unwrap();
        assert_eq!(cfg.background, 0.1);
        assert_eq!(cfg.cell_intensity, [0.6, 1.0]);
        assert_eq!(cfg.annotation_density, 1.0);
    }
}
