//! Voxel embedding based instance segmentation and tracking for 3D+time
//! microscopy-like videos.
//!
//! The pipeline runs in stages that each live in their own module:
//!
//! 1. [`streams`] cuts temporal and zigzag frame windows out of a video.
//! 2. [`encoder`] embeds every pixel of a window (14-d per stream) and fuses
//!    the temporal and zigzag embeddings into a 28-d voxel embedding.
//! 3. [`clustering`] runs mean-shift over the embeddings of a window, giving
//!    instance ids that are consistent over the window's frames.
//! 4. [`sync`] aligns ids across z within each volume and stitches
//!    overlapping windows into a full-length labeling and track table.
//! 5. [`metrics`] scores a result with SEG, TRA (normalized AOGM) and OP.
//!
//! [`synth`] generates videos with exact ground truth for end-to-end checks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod streams;
pub mod sync;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    concat_embeddings, Annotation, Dims, EmbeddingField, EmbeddingKind, InstanceLabeling, TrackRow,
    TrackTable, VoxelGrid,
};

/// Embedding width of one stream.
pub const STREAM_EMBEDDING_DIM: usize = 14;
