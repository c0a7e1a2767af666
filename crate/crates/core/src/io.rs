//! The VXG container: one JSON header line, then a raw little-endian payload.
//!
//! ```text
//! {"dims":[T,Z,Y,X],"dtype":"u8"|"u16"|"u32"|"f32","order":"tzyx"}\n<payload>
//! ```
//!
//! Embedding fields (`.vxe`) reuse the container with an extra `channels` key;
//! channels are innermost. Track tables are plain text, one
//! `id t_begin t_end parent` row per line.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    Annotation, Dims, EmbeddingField, EmbeddingKind, InstanceLabeling, TrackRow, TrackTable,
    VoxelGrid,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8,
    U16,
    U32,
    F32,
}

impl Dtype {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "u32" => Ok(Dtype::U32),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::U32 => "u32",
            Dtype::F32 => "f32",
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 | Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_frames: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_slices: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl Header {
    pub fn new(dims: Dims, dtype: Dtype) -> Self {
        Header {
            dims: dims.as_array().to_vec(),
            dtype: dtype.name().to_string(),
            order: "tzyx".to_string(),
            channels: None,
            kind: None,
            window: None,
            spacing: None,
            annotated_frames: None,
            annotated_slices: None,
            meta: None,
        }
    }

    pub fn grid_dims(&self) -> Result<Dims> {
        match self.dims.as_slice() {
            [t, z, y, x] => Dims::new(*t, *z, *y, *x)
                .map_err(|_| Error::MalformedHeader(format!("non-positive dims {:?}", self.dims))),
            other => Err(Error::MalformedHeader(format!(
                "expected 4 dims, found {}",
                other.len()
            ))),
        }
    }
}

/// Reads the header line and the raw payload of a VXG-style file.
pub fn read_raw(path: &Path) -> Result<(Header, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader(
            "missing newline after header".into(),
        ));
    }
    line.pop();
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.order != "tzyx" {
        return Err(Error::MalformedHeader(format!(
            "unsupported axis order `{}`",
            header.order
        )));
    }
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    Ok((header, payload))
}

pub fn write_raw(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let mut bytes =
        serde_json::to_vec(header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn check_len(expected_elems: usize, dtype: Dtype, payload: &[u8]) -> Result<()> {
    let expected = expected_elems * dtype.size();
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    Ok(())
}

fn decode_f32(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn decode_uint(payload: &[u8], dtype: Dtype) -> Vec<u32> {
    match dtype {
        Dtype::U8 => payload.iter().map(|&b| b as u32).collect(),
        Dtype::U16 => payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        Dtype::U32 => payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F32 => unreachable!("float payload decoded as integers"),
    }
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Reads an intensity video. Integer payloads are divided by the dtype maximum.
pub fn read_volume(path: &Path) -> Result<VoxelGrid> {
    let (header, payload) = read_raw(path)?;
    let dims = header.grid_dims()?;
    let dtype = Dtype::parse(&header.dtype)?;
    check_len(dims.len(), dtype, &payload)?;
    let data: Vec<f32> = match dtype {
        Dtype::F32 => decode_f32(&payload),
        Dtype::U8 => payload.iter().map(|&v| v as f32 / u8::MAX as f32).collect(),
        Dtype::U16 => decode_uint(&payload, dtype)
            .into_iter()
            .map(|v| v as f32 / u16::MAX as f32)
            .collect(),
        Dtype::U32 => decode_uint(&payload, dtype)
            .into_iter()
            .map(|v| (v as f64 / u32::MAX as f64) as f32)
            .collect(),
    };
    let grid = VoxelGrid::new(dims, data)?;
    match header.spacing {
        Some(s) => grid.with_spacing(s),
        None => Ok(grid),
    }
}

/// Writes an intensity video with an `f32` payload.
pub fn write_volume(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let mut header = Header::new(grid.dims(), Dtype::F32);
    if grid.spacing() != [1.0; 3] {
        header.spacing = Some(grid.spacing());
    }
    write_raw(path, &header, &encode_f32(grid.data()))
}

pub fn read_labeling(path: &Path) -> Result<InstanceLabeling> {
    let (header, payload) = read_raw(path)?;
    let dims = header.grid_dims()?;
    let dtype = Dtype::parse(&header.dtype)?;
    if dtype == Dtype::F32 {
        return Err(Error::InvalidData("labelings need an integer dtype".into()));
    }
    check_len(dims.len(), dtype, &payload)?;
    let labeling = InstanceLabeling::new(dims, decode_uint(&payload, dtype))?;
    let annotation = match (header.annotated_frames, header.annotated_slices) {
        (None, None) => Annotation::All,
        (Some(f), None) => Annotation::Frames(f.into_iter().collect()),
        (None, Some(s)) => Annotation::Slices(s.into_iter().map(|[t, z]| (t, z)).collect()),
        (Some(_), Some(_)) => {
            return Err(Error::MalformedHeader(
                "both annotated_frames and annotated_slices present".into(),
            ))
        }
    };
    labeling.with_annotation(annotation)
}

/// Writes a labeling with a `u32` payload; sparse annotation goes into the header.
pub fn write_labeling(labeling: &InstanceLabeling, path: &Path) -> Result<()> {
    let mut header = Header::new(labeling.dims(), Dtype::U32);
    match labeling.annotation() {
        Annotation::All => {}
        Annotation::Frames(f) => header.annotated_frames = Some(f.iter().copied().collect()),
        Annotation::Slices(s) => {
            header.annotated_slices = Some(s.iter().map(|&(t, z)| [t, z]).collect())
        }
    }
    let payload: Vec<u8> = labeling
        .ids()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write_raw(path, &header, &payload)
}

/// Writes an embedding field: `dim` embedding channels followed by the foreground score.
pub fn write_field(field: &EmbeddingField, window: usize, path: &Path) -> Result<()> {
    let d = field.dim();
    let mut header = Header::new(field.dims(), Dtype::F32);
    header.channels = Some(d + 1);
    header.kind = Some(field.kind().name().to_string());
    header.window = Some(window);
    let mut values = Vec::with_capacity(field.dims().len() * (d + 1));
    for (i, fg) in field.fg_scores().iter().enumerate() {
        values.extend_from_slice(field.vector(i));
        values.push(*fg);
    }
    write_raw(path, &header, &encode_f32(&values))
}

/// Reads a field written by [`write_field`], returning it with its window length.
pub fn read_field(path: &Path) -> Result<(EmbeddingField, usize)> {
    let (header, payload) = read_raw(path)?;
    let dims = header.grid_dims()?;
    if Dtype::parse(&header.dtype)? != Dtype::F32 {
        return Err(Error::InvalidData(
            "embedding fields need an f32 payload".into(),
        ));
    }
    let kind = header
        .kind
        .as_deref()
        .and_then(EmbeddingKind::from_name)
        .ok_or_else(|| Error::MalformedHeader("missing or unknown embedding kind".into()))?;
    let channels = header
        .channels
        .ok_or_else(|| Error::MalformedHeader("missing channels".into()))?;
    if channels != kind.dim() + 1 {
        return Err(Error::MalformedHeader(format!(
            "{} field needs {} channels, header says {channels}",
            kind.name(),
            kind.dim() + 1
        )));
    }
    let window = header
        .window
        .ok_or_else(|| Error::MalformedHeader("missing window".into()))?;
    check_len(dims.len() * channels, Dtype::F32, &payload)?;
    let values = decode_f32(&payload);
    let d = kind.dim();
    let mut vectors = Vec::with_capacity(dims.len() * d);
    let mut fg = Vec::with_capacity(dims.len());
    for chunk in values.chunks_exact(channels) {
        vectors.extend_from_slice(&chunk[..d]);
        fg.push(chunk[d]);
    }
    Ok((EmbeddingField::new(dims, kind, vectors, fg)?, window))
}

pub fn format_track_table(table: &TrackTable) -> String {
    table
        .rows()
        .iter()
        .map(|r| format!("{} {} {} {}\n", r.id, r.t_begin, r.t_end, r.parent))
        .collect()
}

pub fn parse_track_table(text: &str) -> Result<TrackTable> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::TrackTable(format!(
                "line {}: expected 4 fields, found {}",
                n + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|e| Error::TrackTable(format!("line {}: `{s}`: {e}", n + 1)))
        };
        rows.push(TrackRow {
            id: num(fields[0])? as u32,
            t_begin: num(fields[1])? as usize,
            t_end: num(fields[2])? as usize,
            parent: num(fields[3])? as u32,
        });
    }
    TrackTable::new(rows)
}

pub fn write_track_table(table: &TrackTable, path: &Path) -> Result<()> {
    fs::write(path, format_track_table(table)).map_err(|e| Error::io(path, e))
}

pub fn read_track_table(path: &Path) -> Result<TrackTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_track_table(&text)
}

/// Helper for tests and the CLI: frames of `labeling` listed in its annotation.
pub fn annotated_frame_set(labeling: &InstanceLabeling) -> BTreeSet<usize> {
    (0..labeling.dims().t)
        .filter(|&t| (0..labeling.dims().z).any(|z| labeling.annotation().is_annotated(t, z)))
        .collect()
}
