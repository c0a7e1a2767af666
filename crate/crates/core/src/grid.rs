//! Volumetric video containers shared by every stage of the pipeline.
//!
//! All arrays are stored flat in `(t, z, y, x)` order with `t` outermost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Extent of a 3D+time array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub t: usize,
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    pub fn new(t: usize, z: usize, y: usize, x: usize) -> Result<Self> {
        if t == 0 || z == 0 || y == 0 || x == 0 {
            return Err(Error::InvalidData(format!(
                "dims must be positive, got [{t},{z},{y},{x}]"
            )));
        }
        Ok(Dims { t, z, y, x })
    }

    pub fn len(&self) -> usize {
        self.t * self.z * self.y * self.x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.y * self.x
    }

    pub fn volume_len(&self) -> usize {
        self.z * self.y * self.x
    }

    #[inline]
    pub fn index(&self, t: usize, z: usize, y: usize, x: usize) -> usize {
        ((t * self.z + z) * self.y + y) * self.x + x
    }

    /// Offset of the first voxel of slice `(t, z)`.
    #[inline]
    pub fn slice_offset(&self, t: usize, z: usize) -> usize {
        (t * self.z + z) * self.slice_len()
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.t, self.z, self.y, self.x]
    }

    /// Same spatial extent with a different number of frames.
    pub fn with_frames(&self, t: usize) -> Dims {
        Dims { t, ..*self }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.t, self.z, self.y, self.x)
    }
}

/// Raw intensity video, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    data: Vec<f32>,
    spacing: [f64; 3],
}

impl VoxelGrid {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "grid {dims} needs {} voxels, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidData(format!(
                "intensity {} at voxel {i} is outside [0,1]",
                data[i]
            )));
        }
        Ok(VoxelGrid {
            dims,
            data,
            spacing: [1.0; 3],
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidData(format!(
                "voxel spacing must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Voxel spacing as `(dz, dy, dx)`.
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn get(&self, t: usize, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.dims.index(t, z, y, x)]
    }

    /// The `Y×X` slice at `(t, z)`.
    pub fn slice(&self, t: usize, z: usize) -> &[f32] {
        let off = self.dims.slice_offset(t, z);
        &self.data[off..off + self.dims.slice_len()]
    }
}

/// Which frames (or slices) of a labeling carry trustworthy annotation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Annotation {
    #[default]
    All,
    Frames(BTreeSet<usize>),
    Slices(BTreeSet<(usize, usize)>),
}

impl Annotation {
    pub fn is_annotated(&self, t: usize, z: usize) -> bool {
        match self {
            Annotation::All => true,
            Annotation::Frames(f) => f.contains(&t),
            Annotation::Slices(s) => s.contains(&(t, z)),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Annotation::All => false,
            Annotation::Frames(f) => f.is_empty(),
            Annotation::Slices(s) => s.is_empty(),
        }
    }
}

/// Per-voxel instance ids, `0` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabeling {
    dims: Dims,
    ids: Vec<u32>,
    annotation: Annotation,
}

impl InstanceLabeling {
    pub fn new(dims: Dims, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "labeling {dims} needs {} voxels, got {}",
                dims.len(),
                ids.len()
            )));
        }
        Ok(InstanceLabeling {
            dims,
            ids,
            annotation: Annotation::All,
        })
    }

    pub fn background(dims: Dims) -> Self {
        InstanceLabeling {
            dims,
            ids: vec![0; dims.len()],
            annotation: Annotation::All,
        }
    }

    pub fn with_annotation(mut self, annotation: Annotation) -> Result<Self> {
        let bad = match &annotation {
            Annotation::All => None,
            Annotation::Frames(f) => f
                .iter()
                .find(|t| **t >= self.dims.t)
                .map(|t| format!("t={t}")),
            Annotation::Slices(s) => s
                .iter()
                .find(|(t, z)| *t >= self.dims.t || *z >= self.dims.z)
                .map(|(t, z)| format!("(t={t}, z={z})")),
        };
        if let Some(bad) = bad {
            return Err(Error::OutOfRange(format!(
                "annotated coordinate {bad} outside labeling {}",
                self.dims
            )));
        }
        self.annotation = annotation;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }

    pub fn annotation(&self) -> &Annotation {
        &self.annotation
    }

    pub fn get(&self, t: usize, z: usize, y: usize, x: usize) -> u32 {
        self.ids[self.dims.index(t, z, y, x)]
    }

    pub fn slice(&self, t: usize, z: usize) -> &[u32] {
        let off = self.dims.slice_offset(t, z);
        &self.ids[off..off + self.dims.slice_len()]
    }

    /// The `Z×Y×X` volume at frame `t`.
    pub fn volume(&self, t: usize) -> &[u32] {
        let n = self.dims.volume_len();
        &self.ids[t * n..(t + 1) * n]
    }

    pub fn volume_mut(&mut self, t: usize) -> &mut [u32] {
        let n = self.dims.volume_len();
        &mut self.ids[t * n..(t + 1) * n]
    }

    /// Sorted distinct positive ids.
    pub fn instance_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.ids.iter().copied().filter(|&i| i > 0).collect();
        set.into_iter().collect()
    }
}

/// Width of the per-voxel embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Temporal14,
    Context14,
    Fused28,
}

impl EmbeddingKind {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingKind::Temporal14 | EmbeddingKind::Context14 => crate::STREAM_EMBEDDING_DIM,
            EmbeddingKind::Fused28 => 2 * crate::STREAM_EMBEDDING_DIM,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingKind::Temporal14 => "temporal14",
            EmbeddingKind::Context14 => "context14",
            EmbeddingKind::Fused28 => "fused28",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "temporal14" => Some(EmbeddingKind::Temporal14),
            "context14" => Some(EmbeddingKind::Context14),
            "fused28" => Some(EmbeddingKind::Fused28),
            _ => None,
        }
    }
}

/// One embedding vector plus foreground score per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingField {
    dims: Dims,
    kind: EmbeddingKind,
    vectors: Vec<f32>,
    fg_scores: Vec<f32>,
}

impl EmbeddingField {
    pub fn new(
        dims: Dims,
        kind: EmbeddingKind,
        vectors: Vec<f32>,
        fg_scores: Vec<f32>,
    ) -> Result<Self> {
        let n = dims.len();
        if vectors.len() != n * kind.dim() || fg_scores.len() != n {
            return Err(Error::DimsMismatch(format!(
                "{} field over {dims} needs {} components and {n} scores, got {} and {}",
                kind.name(),
                n * kind.dim(),
                vectors.len(),
                fg_scores.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite embedding component".into()));
        }
        if fg_scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidData("foreground score outside [0,1]".into()));
        }
        Ok(EmbeddingField {
            dims,
            kind,
            vectors,
            fg_scores,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn fg_scores(&self) -> &[f32] {
        &self.fg_scores
    }

    /// Embedding of the voxel with flat index `i`.
    pub fn vector(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.vectors[i * d..(i + 1) * d]
    }
}

/// Fuses a temporal and a context field into the 28-component voxel embedding.
///
/// Per voxel the output is `[a_1..a_14, b_1..b_14]`; foreground scores are averaged.
pub fn concat_embeddings(a: &EmbeddingField, b: &EmbeddingField) -> Result<EmbeddingField> {
    if a.kind != EmbeddingKind::Temporal14 || b.kind != EmbeddingKind::Context14 {
        return Err(Error::KindMismatch(format!(
            "expected temporal14 ⊕ context14, got {} ⊕ {}",
            a.kind.name(),
            b.kind.name()
        )));
    }
    if a.dims != b.dims {
        return Err(Error::DimsMismatch(format!(
            "cannot concatenate fields over {} and {}",
            a.dims, b.dims
        )));
    }
    let d = crate::STREAM_EMBEDDING_DIM;
    let n = a.dims.len();
    let mut vectors = Vec::with_capacity(n * 2 * d);
    for i in 0..n {
        vectors.extend_from_slice(a.vector(i));
        vectors.extend_from_slice(b.vector(i));
    }
    let fg_scores = a
        .fg_scores
        .iter()
        .zip(&b.fg_scores)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    EmbeddingField::new(a.dims, EmbeddingKind::Fused28, vectors, fg_scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackRow {
    pub id: u32,
    pub t_begin: usize,
    pub t_end: usize,
    pub parent: u32,
}

/// Per-track frame span, in the `res_track.txt` layout.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackTable {
    rows: Vec<TrackRow>,
}

impl TrackTable {
    pub fn new(mut rows: Vec<TrackRow>) -> Result<Self> {
        rows.sort_by_key(|r| r.id);
        for w in rows.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::TrackTable(format!("duplicate id {}", w[0].id)));
            }
        }
        for r in &rows {
            if r.id == 0 {
                return Err(Error::TrackTable(
                    "track id 0 is reserved for background".into(),
                ));
            }
            if r.t_begin > r.t_end {
                return Err(Error::TrackTable(format!(
                    "track {} begins at {} after its end {}",
                    r.id, r.t_begin, r.t_end
                )));
            }
        }
        Ok(TrackTable { rows })
    }

    /// First and last frame of every id present in `labeling`, parent 0.
    pub fn from_labeling(labeling: &InstanceLabeling) -> Self {
        let mut spans: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for t in 0..labeling.dims().t {
            let present: BTreeSet<u32> = labeling
                .volume(t)
                .iter()
                .copied()
                .filter(|&i| i > 0)
                .collect();
            for id in present {
                spans.entry(id).and_modify(|s| s.1 = t).or_insert((t, t));
            }
        }
        TrackTable {
            rows: spans
                .into_iter()
                .map(|(id, (t_begin, t_end))| TrackRow {
                    id,
                    t_begin,
                    t_end,
                    parent: 0,
                })
                .collect(),
        }
    }

    pub fn rows(&self) -> &[TrackRow] {
        &self.rows
    }

    pub fn get(&self, id: u32) -> Option<&TrackRow> {
        self.rows
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(
        kind: EmbeddingKind,
        dims: Dims,
        f: impl Fn(usize, usize) -> f32,
        fg: f32,
    ) -> EmbeddingField {
        let d = kind.dim();
        let v = (0..dims.len() * d).map(|k| f(k / d, k % d)).collect();
        EmbeddingField::new(dims, kind, v, vec![fg; dims.len()]).unwrap()
    }

    #[test]
    fn concat_lengths_and_order() {
        let dims = Dims::new(2, 2, 3, 3).unwrap();
        let a = field(
            EmbeddingKind::Temporal14,
            dims,
            |i, c| (i * 100 + c) as f32,
            0.2,
        );
        let b = field(
            EmbeddingKind::Context14,
            dims,
            |i, c| -((i * 100 + c) as f32),
            0.6,
        );
        let fused = concat_embeddings(&a, &b).unwrap();
        assert_eq!(fused.kind(), EmbeddingKind::Fused28);
        for i in 0..dims.len() {
            let v = fused.vector(i);
            assert_eq!(v.len(), 28);
            assert_eq!(&v[..14], a.vector(i));
            assert_eq!(&v[14..], b.vector(i));
            // component 15 (1-based) is b's first
            assert_eq!(v[14], b.vector(i)[0]);
            assert!((fused.fg_scores()[i] - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_zeros() {
        let dims = Dims::new(1, 1, 2, 2).unwrap();
        let a = field(EmbeddingKind::Temporal14, dims, |_, _| 0.0, 0.0);
        let b = field(EmbeddingKind::Context14, dims, |_, _| 0.0, 0.0);
        let fused = concat_embeddings(&a, &b).unwrap();
        assert!(fused.vectors().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn concat_rejects_mismatches() {
        let dims = Dims::new(1, 1, 2, 2).unwrap();
        let other = Dims::new(1, 1, 2, 3).unwrap();
        let a = field(EmbeddingKind::Temporal14, dims, |_, _| 0.0, 0.0);
        let b = field(EmbeddingKind::Context14, other, |_, _| 0.0, 0.0);
        assert!(matches!(
            concat_embeddings(&a, &b),
            Err(Error::DimsMismatch(_))
        ));
        let b2 = field(EmbeddingKind::Temporal14, dims, |_, _| 0.0, 0.0);
        assert!(matches!(
            concat_embeddings(&a, &b2),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn grid_rejects_out_of_range() {
        let dims = Dims::new(1, 1, 1, 2).unwrap();
        assert!(VoxelGrid::new(dims, vec![0.0, 1.5]).is_err());
        assert!(VoxelGrid::new(dims, vec![0.0, f32::NAN]).is_err());
        assert!(VoxelGrid::new(dims, vec![0.0]).is_err());
    }

    #[test]
    fn track_table_from_labeling() {
        let dims = Dims::new(3, 1, 1, 2).unwrap();
        let lab = InstanceLabeling::new(dims, vec![1, 0, 1, 2, 0, 2]).unwrap();
        let table = TrackTable::from_labeling(&lab);
        assert_eq!(
            table.rows(),
            &[
                TrackRow {
                    id: 1,
                    t_begin: 0,
                    t_end: 1,
                    parent: 0
                },
                TrackRow {
                    id: 2,
                    t_begin: 1,
                    t_end: 2,
                    parent: 0
                },
            ]
        );
        assert!(TrackTable::new(vec![table.rows()[0], table.rows()[0]]).is_err());
    }
}
