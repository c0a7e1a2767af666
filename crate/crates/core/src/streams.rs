//! Temporal and zigzag frame windows.
//!
//! A temporal path holds `z` fixed while `t` advances. A zigzag path advances
//! `t` every step while `z` follows the period-4 pattern `z0, z0+1, z0, z0-1`,
//! clamped into the volume.

use crate::error::{Error, Result};
use crate::grid::{Dims, InstanceLabeling, VoxelGrid};

pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_STRIDE: usize = 8;

/// z offsets of the W pattern, indexed by step modulo 4.
const W_PATTERN: [isize; 4] = [0, 1, 0, -1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Temporal,
    Zigzag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPath {
    pub kind: StreamKind,
    /// `(t, z)` per step.
    pub coords: Vec<(usize, usize)>,
}

impl StreamPath {
    pub fn window(&self) -> usize {
        self.coords.len()
    }

    pub fn start(&self) -> (usize, usize) {
        self.coords[0]
    }

    /// Checks the kind invariant: `t` advances by one per step, and `z` is
    /// constant (temporal) or moves by at most one (zigzag).
    pub fn is_legal(&self) -> bool {
        if self.coords.is_empty() {
            return false;
        }
        self.coords.windows(2).all(|w| {
            let (t0, z0) = w[0];
            let (t1, z1) = w[1];
            t1 == t0 + 1
                && match self.kind {
                    StreamKind::Temporal => z1 == z0,
                    StreamKind::Zigzag => z1.abs_diff(z0) <= 1,
                }
        })
    }
}

fn clamp_z(z: isize, depth: usize) -> usize {
    z.clamp(0, depth as isize - 1) as usize
}

/// z index at `step` of a zigzag anchored at `z0`; `phase` shifts the pattern.
pub fn zigzag_z(z0: usize, step: usize, phase: usize, depth: usize) -> usize {
    clamp_z(z0 as isize + W_PATTERN[(step + phase) % 4], depth)
}

pub fn zigzag_path(t0: usize, z0: usize, window: usize, depth: usize) -> StreamPath {
    zigzag_path_with_phase(t0, z0, window, depth, 0)
}

pub fn zigzag_path_with_phase(
    t0: usize,
    z0: usize,
    window: usize,
    depth: usize,
    phase: usize,
) -> StreamPath {
    StreamPath {
        kind: StreamKind::Zigzag,
        coords: (0..window)
            .map(|i| (t0 + i, zigzag_z(z0, i, phase, depth)))
            .collect(),
    }
}

pub fn temporal_path(t0: usize, z: usize, window: usize) -> StreamPath {
    StreamPath {
        kind: StreamKind::Temporal,
        coords: (0..window).map(|i| (t0 + i, z)).collect(),
    }
}

/// Window starts `0, stride, 2·stride, ...` plus a final start at `T - window`
/// when the stride would otherwise leave trailing frames uncovered.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window and stride must be ≥ 1".into()));
    }
    if window > frames {
        return Err(Error::InvalidConfig(format!(
            "window {window} longer than the {frames}-frame sequence"
        )));
    }
    let last = frames - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().expect("non-empty") != last {
        starts.push(last);
    }
    Ok(starts)
}

pub fn temporal_paths(dims: Dims, window: usize, stride: usize) -> Result<Vec<StreamPath>> {
    let starts = window_starts(dims.t, window, stride)?;
    Ok((0..dims.z)
        .flat_map(|z| starts.iter().map(move |&t0| temporal_path(t0, z, window)))
        .collect())
}

/// Zigzag paths for every base `z0` and window start.
///
/// With a single pattern phase, odd steps never reach `z = 0` (or `z = Z-1`),
/// so for `Z ≥ 2` each window start also gets the half-period-shifted pattern
/// anchored at both boundary layers. Together they visit every `(t, z)`.
pub fn zigzag_paths(dims: Dims, window: usize, stride: usize) -> Result<Vec<StreamPath>> {
    let starts = window_starts(dims.t, window, stride)?;
    let mut out = Vec::new();
    for z0 in 0..dims.z {
        for &t0 in &starts {
            out.push(zigzag_path(t0, z0, window, dims.z));
        }
    }
    if dims.z >= 2 {
        for z0 in [0, dims.z - 1] {
            for &t0 in &starts {
                out.push(zigzag_path_with_phase(t0, z0, window, dims.z, 2));
            }
        }
    }
    Ok(out)
}

/// A window of 2D frames drawn along a path.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSample {
    pub path: StreamPath,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f32>>,
    pub labels: Option<Vec<Vec<u32>>>,
    pub valid_label_mask: Vec<bool>,
}

impl StreamSample {
    pub fn has_valid_labels(&self) -> bool {
        self.valid_label_mask.iter().any(|v| *v)
    }
}

pub fn extract_sample(
    grid: &VoxelGrid,
    labeling: Option<&InstanceLabeling>,
    path: &StreamPath,
) -> Result<StreamSample> {
    let dims = grid.dims();
    if let Some(l) = labeling {
        if l.dims() != dims {
            return Err(Error::DimsMismatch(format!(
                "grid {dims} vs labeling {}",
                l.dims()
            )));
        }
    }
    if let Some(&(t, z)) = path
        .coords
        .iter()
        .find(|(t, z)| *t >= dims.t || *z >= dims.z)
    {
        return Err(Error::OutOfRange(format!(
            "slice (t={t}, z={z}) outside grid {dims}"
        )));
    }
    let frames = path
        .coords
        .iter()
        .map(|&(t, z)| grid.slice(t, z).to_vec())
        .collect();
    let labels = labeling.map(|l| {
        path.coords
            .iter()
            .map(|&(t, z)| l.slice(t, z).to_vec())
            .collect()
    });
    let valid_label_mask = path
        .coords
        .iter()
        .map(|&(t, z)| labeling.is_some_and(|l| l.annotation().is_annotated(t, z)))
        .collect();
    Ok(StreamSample {
        path: path.clone(),
        height: dims.y,
        width: dims.x,
        frames,
        labels,
        valid_label_mask,
    })
}
