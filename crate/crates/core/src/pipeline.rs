//! Field to tracked labeling: cluster windows, sync z, stitch windows.

use std::ops::Range;

use crate::clustering::{cluster_window, MeanShiftConfig, WindowLabeling};
use crate::error::{Error, Result};
use crate::grid::{EmbeddingField, InstanceLabeling, TrackTable};
use crate::sync::{stitch_windows, sync_labeling};

/// Frame ranges of `window` frames with a one-frame overlap; the last range
/// may be shorter.
pub fn clustering_ranges(frames: usize, window: usize) -> Result<Vec<Range<usize>>> {
    if frames == 0 {
        return Err(Error::Empty("no frames".into()));
    }
    if window < 2 {
        return Err(Error::InvalidConfig(
            "clustering windows need at least 2 frames to overlap".into(),
        ));
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(frames);
        out.push(start..end);
        if end == frames {
            return Ok(out);
        }
        start = end - 1;
    }
}

/// Clusters every window of the field and syncs each of its volumes along z.
pub fn cluster_windows(
    field: &EmbeddingField,
    window: usize,
    cfg: &MeanShiftConfig,
) -> Result<Vec<WindowLabeling>> {
    clustering_ranges(field.dims().t, window)?
        .into_iter()
        .map(|r| {
            let w = cluster_window(field, r, cfg)?;
            Ok(WindowLabeling {
                t_begin: w.t_begin,
                labeling: sync_labeling(&w.labeling),
            })
        })
        .collect()
}

pub fn segment_and_track(
    field: &EmbeddingField,
    window: usize,
    cfg: &MeanShiftConfig,
) -> Result<(InstanceLabeling, TrackTable)> {
    stitch_windows(&cluster_windows(field, window, cfg)?)
}
