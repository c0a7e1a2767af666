//! Mean-shift mode seeking over voxel embeddings.
//!
//! [`mean_shift_modes`] seeds from every point. [`fast_mean_shift_modes`] bins
//! the points on a grid with cell edge `h` centred on the origin, seeds once
//! per occupied bin and assigns every point to its nearest converged mode.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{Dims, EmbeddingField, EmbeddingKind, InstanceLabeling};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Flat,
    /// Gaussian weights with `σ = h`.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub max_iters: usize,
    pub convergence_eps: f64,
    pub mode_merge_radius: f64,
    pub min_cluster_voxels: usize,
    pub accelerated: bool,
    pub fg_threshold: f64,
    /// Split each mode into its spatially connected pieces before assigning ids.
    pub split_disconnected: bool,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        MeanShiftConfig {
            bandwidth: 0.1,
            kernel: Kernel::Flat,
            max_iters: 200,
            convergence_eps: 1e-4,
            mode_merge_radius: 0.05,
            min_cluster_voxels: 5,
            accelerated: true,
            fg_threshold: 0.5,
            split_disconnected: true,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be > 0".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidConfig("convergence eps must be > 0".into()));
        }
        if !(self.mode_merge_radius >= 0.0 && self.mode_merge_radius <= self.bandwidth) {
            return Err(Error::InvalidConfig(
                "merge radius must lie in [0, bandwidth]".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeResult {
    pub modes: Vec<Vec<f64>>,
    /// Mode index of every input point.
    pub assignment: Vec<usize>,
    /// Total shift steps over all seeds.
    pub shift_iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::Empty("mean shift needs at least one point".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Empty("zero-dimensional points".into()));
    }
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::DimsMismatch(format!(
            "point {i} has {} components, expected {dim}",
            points[i].len()
        )));
    }
    Ok(dim)
}

/// Kernel-weighted mean of `points` around `at`; `None` when no point has weight.
pub fn shift_once(at: &[f64], points: &[Vec<f64>], cfg: &MeanShiftConfig) -> Option<Vec<f64>> {
    let h2 = cfg.bandwidth * cfg.bandwidth;
    let mut acc = vec![0.0; at.len()];
    let mut total = 0.0;
    for p in points {
        let d2 = dist2(at, p);
        let w = match cfg.kernel {
            Kernel::Flat => {
                if d2 <= h2 {
                    1.0
                } else {
                    continue;
                }
            }
            Kernel::Gaussian => (-d2 / (2.0 * h2)).exp(),
        };
        total += w;
        for (a, x) in acc.iter_mut().zip(p) {
            *a += w * x;
        }
    }
    (total > 0.0).then(|| acc.into_iter().map(|a| a / total).collect())
}

/// Iterates the shift from `seed` until it moves less than eps.
fn converge(seed: &[f64], points: &[Vec<f64>], cfg: &MeanShiftConfig) -> (Vec<f64>, usize) {
    let mut x = seed.to_vec();
    let mut steps = 0;
    for _ in 0..cfg.max_iters {
        let Some(next) = shift_once(&x, points, cfg) else {
            break;
        };
        steps += 1;
        let moved = dist2(&x, &next).sqrt();
        x = next;
        if moved < cfg.convergence_eps {
            break;
        }
    }
    (x, steps)
}

/// Merges converged positions in order; the lowest-index representative wins.
fn merge(converged: Vec<Vec<f64>>, radius: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let r2 = radius * radius;
    let mut modes: Vec<Vec<f64>> = Vec::new();
    let mut of_seed = Vec::with_capacity(converged.len());
    for pos in converged {
        match modes.iter().position(|m| dist2(m, &pos) <= r2) {
            Some(k) => of_seed.push(k),
            None => {
                of_seed.push(modes.len());
                modes.push(pos);
            }
        }
    }
    (modes, of_seed)
}

pub fn mean_shift_modes(points: &[Vec<f64>], cfg: &MeanShiftConfig) -> Result<ModeResult> {
    cfg.validate()?;
    check_points(points)?;
    let mut shift_iterations = 0;
    let converged: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let (x, steps) = converge(p, points, cfg);
            shift_iterations += steps;
            x
        })
        .collect();
    let (modes, assignment) = merge(converged, cfg.mode_merge_radius);
    Ok(ModeResult {
        modes,
        assignment,
        shift_iterations,
    })
}

pub fn fast_mean_shift_modes(points: &[Vec<f64>], cfg: &MeanShiftConfig) -> Result<ModeResult> {
    cfg.validate()?;
    let dim = check_points(points)?;
    let mut bin_of: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut bins: Vec<(Vec<f64>, usize)> = Vec::new();
    for p in points {
        let key: Vec<i64> = p
            .iter()
            .map(|v| (v / cfg.bandwidth).round() as i64)
            .collect();
        let k = *bin_of.entry(key).or_insert_with(|| {
            bins.push((vec![0.0; dim], 0));
            bins.len() - 1
        });
        let (sum, count) = &mut bins[k];
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
        *count += 1;
    }
    let mut shift_iterations = 0;
    let converged: Vec<Vec<f64>> = bins
        .iter()
        .map(|(sum, count)| {
            let seed: Vec<f64> = sum.iter().map(|s| s / *count as f64).collect();
            let (x, steps) = converge(&seed, points, cfg);
            shift_iterations += steps;
            x
        })
        .collect();
    let (modes, _) = merge(converged, cfg.mode_merge_radius);
    let assignment = points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, m) in modes.iter().enumerate() {
                let d = dist2(p, m);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(ModeResult {
        modes,
        assignment,
        shift_iterations,
    })
}

/// Instance ids of one window of frames, `labeling.dims().t` = window length.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLabeling {
    pub t_begin: usize,
    pub labeling: InstanceLabeling,
}

impl WindowLabeling {
    pub fn t_end(&self) -> usize {
        self.t_begin + self.labeling.dims().t - 1
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Clusters the foreground voxels of frames `frames` of a fused field.
///
/// All voxels with `fg ≥ fg_threshold` across the window are pooled, so one
/// mode gets one id in every frame. Ids `1..=K` follow the lexicographic
/// `(t, z, y, x)` order of each cluster's first voxel.
pub fn cluster_window(
    field: &EmbeddingField,
    frames: Range<usize>,
    cfg: &MeanShiftConfig,
) -> Result<WindowLabeling> {
    cfg.validate()?;
    if field.kind() != EmbeddingKind::Fused28 {
        return Err(Error::KindMismatch(format!(
            "clustering needs a fused28 field, got {}",
            field.kind().name()
        )));
    }
    let dims = field.dims();
    if frames.is_empty() || frames.end > dims.t {
        return Err(Error::OutOfRange(format!(
            "frames {frames:?} outside field {dims}"
        )));
    }
    let wdims = Dims::new(frames.len(), dims.z, dims.y, dims.x)?;
    let base = frames.start * dims.volume_len();

    let mut voxels = Vec::new();
    let mut points = Vec::new();
    for local in 0..wdims.len() {
        let global = base + local;
        if (field.fg_scores()[global] as f64) < cfg.fg_threshold {
            continue;
        }
        let v: Vec<f64> = field.vector(global).iter().map(|x| *x as f64).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        voxels.push(local);
        points.push(if n > 0.0 {
            v.into_iter().map(|x| x / n).collect()
        } else {
            v
        });
    }
    let mut ids = vec![0u32; wdims.len()];
    if voxels.is_empty() {
        return Ok(WindowLabeling {
            t_begin: frames.start,
            labeling: InstanceLabeling::new(wdims, ids)?,
        });
    }
    let modes = if cfg.accelerated {
        fast_mean_shift_modes(&points, cfg)?
    } else {
        mean_shift_modes(&points, cfg)?
    };

    // cluster key per voxel: the mode, or the connected piece of the mode
    let mut mode_at = vec![usize::MAX; wdims.len()];
    for (&v, &m) in voxels.iter().zip(&modes.assignment) {
        mode_at[v] = m;
    }
    let key: Vec<usize> = if cfg.split_disconnected {
        let mut parent: Vec<usize> = (0..wdims.len()).collect();
        let strides = [wdims.volume_len(), wdims.slice_len(), wdims.x, 1];
        for &v in &voxels {
            let mut rem = v;
            for &stride in &strides {
                let coord = rem / stride;
                rem %= stride;
                if coord > 0 && mode_at[v - stride] == mode_at[v] {
                    union(&mut parent, v, v - stride);
                }
            }
        }
        voxels.iter().map(|&v| find(&mut parent, v)).collect()
    } else {
        modes.assignment.clone()
    };

    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for k in &key {
        *sizes.entry(*k).or_default() += 1;
    }
    let mut id_of: HashMap<usize, u32> = HashMap::new();
    let mut next = 1u32;
    for (&v, k) in voxels.iter().zip(&key) {
        if sizes[k] < cfg.min_cluster_voxels {
            continue;
        }
        let id = *id_of.entry(*k).or_insert_with(|| {
            next += 1;
            next - 1
        });
        ids[v] = id;
    }
    Ok(WindowLabeling {
        t_begin: frames.start,
        labeling: InstanceLabeling::new(wdims, ids)?,
    })
}
