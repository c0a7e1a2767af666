use super::net::{forward_window, EmbeddedFrame};
use super::params::{EncoderParams, StreamEncoders};
use crate::error::{Error, Result};
use crate::grid::{concat_embeddings, EmbeddingField, EmbeddingKind, VoxelGrid};
use crate::streams::{temporal_path, zigzag_path_with_phase, zigzag_z, StreamPath};
use crate::STREAM_EMBEDDING_DIM;

/// Runs `params` along `path` for `steps` steps and returns the last output.
fn embed_at(
    params: &EncoderParams,
    grid: &VoxelGrid,
    path: &StreamPath,
    steps: usize,
) -> Result<EmbeddedFrame> {
    let dims = grid.dims();
    let frames: Vec<&[f32]> = path.coords[..steps]
        .iter()
        .map(|&(t, z)| grid.slice(t, z))
        .collect();
    let mut fwd = forward_window(params, &frames, dims.y, dims.x)?;
    Ok(fwd.outputs.pop().expect("at least one step"))
}

/// Base layer and phase of a zigzag that passes through `z` at `offset`.
/// The boundary layers need the shifted phase at odd offsets.
fn zigzag_base(z: usize, offset: usize, depth: usize) -> (usize, usize) {
    [0, 2]
        .into_iter()
        .flat_map(|phase| (0..depth).map(move |z0| (z0, phase)))
        .find(|&(z0, phase)| zigzag_z(z0, offset, phase, depth) == z)
        .expect("every layer is reachable at every offset")
}

struct StreamField {
    vectors: Vec<f32>,
    fg: Vec<f32>,
}

impl StreamField {
    fn new(n: usize) -> Self {
        StreamField {
            vectors: vec![0.0; n * STREAM_EMBEDDING_DIM],
            fg: vec![0.0; n],
        }
    }

    fn put(&mut self, offset: usize, frame: &EmbeddedFrame) {
        let d = STREAM_EMBEDDING_DIM;
        for (p, fg) in frame.fg_scores.iter().enumerate() {
            self.fg[offset + p] = *fg as f32;
            for (dst, src) in self.vectors[(offset + p) * d..(offset + p + 1) * d]
                .iter_mut()
                .zip(frame.vector(p))
            {
                *dst = *src as f32;
            }
        }
    }
}

/// Builds the fused 28-d field. The embedding of slice `(t, z)` is the first
/// output of the window anchored there; slices in the last `window - 1`
/// frames read the final full window at their offset.
pub fn infer_field(
    encoders: &StreamEncoders,
    grid: &VoxelGrid,
    window: usize,
) -> Result<EmbeddingField> {
    let dims = grid.dims();
    if window == 0 || window > dims.t {
        return Err(Error::InvalidConfig(format!(
            "grid of {} frames is shorter than the {window}-frame window",
            dims.t
        )));
    }
    let last = dims.t - window;
    let n = dims.len();
    let mut temporal = StreamField::new(n);
    let mut context = StreamField::new(n);
    for t in 0..dims.t {
        let (t0, offset) = if t <= last { (t, 0) } else { (last, t - last) };
        for z in 0..dims.z {
            let at = dims.slice_offset(t, z);
            let tp = temporal_path(t0, z, window);
            temporal.put(at, &embed_at(&encoders.temporal, grid, &tp, offset + 1)?);
            let (z0, phase) = zigzag_base(z, offset, dims.z);
            let zp = zigzag_path_with_phase(t0, z0, window, dims.z, phase);
            debug_assert_eq!(zp.coords[offset], (t, z));
            context.put(at, &embed_at(encoders.zigzag(), grid, &zp, offset + 1)?);
        }
    }
    let a = EmbeddingField::new(
        dims,
        EmbeddingKind::Temporal14,
        temporal.vectors,
        temporal.fg,
    )?;
    let b = EmbeddingField::new(dims, EmbeddingKind::Context14, context.vectors, context.fg)?;
    concat_embeddings(&a, &b)
}
