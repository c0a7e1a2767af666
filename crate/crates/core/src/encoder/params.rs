use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_raw, write_raw, Header};

/// Channels of the recurrent state: 14 embedding channels and one foreground logit.
pub const STATE_CHANNELS: usize = crate::STREAM_EMBEDDING_DIM + 1;

pub(crate) const CONV_CHANNELS: [(usize, usize); 3] = [(1, 8), (8, 16), (16, STATE_CHANNELS)];

/// Tensor names and shapes, in storage order.
pub const LAYOUT: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[8, 1, 3, 3]),
    ("conv1.bias", &[8]),
    ("conv2.weight", &[16, 8, 3, 3]),
    ("conv2.bias", &[16]),
    ("conv3.weight", &[STATE_CHANNELS, 16, 3, 3]),
    ("conv3.bias", &[STATE_CHANNELS]),
    ("gate.weight", &[STATE_CHANNELS, STATE_CHANNELS]),
    ("gate.bias", &[STATE_CHANNELS]),
];

pub(crate) const CONV1_W: usize = 0;
pub(crate) const GATE_W: usize = 6;
pub(crate) const GATE_B: usize = 7;

fn tensor_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Offsets of every tensor plus the total count.
fn offsets() -> ([usize; 9], usize) {
    let mut off = [0; 9];
    for (i, (_, shape)) in LAYOUT.iter().enumerate() {
        off[i + 1] = off[i] + tensor_len(shape);
    }
    (off, off[8])
}

pub fn param_count() -> usize {
    offsets().1
}

pub(crate) fn tensor_range(index: usize) -> std::ops::Range<usize> {
    let (off, _) = offsets();
    off[index]..off[index + 1]
}

/// Weights of one stream encoder: three 3×3 conv layers and a 1×1 recurrent gate,
/// stored as one flat vector in [`LAYOUT`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    values: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros() -> Self {
        EncoderParams {
            values: vec![0.0; param_count()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != param_count() {
            return Err(Error::InvalidData(format!(
                "encoder needs {} parameters, got {}",
                param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite encoder parameter".into()));
        }
        Ok(EncoderParams { values })
    }

    /// Gaussian weights with variance `1/fan_in`, zero biases.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = Self::zeros();
        for (i, (name, shape)) in LAYOUT.iter().enumerate() {
            if name.ends_with("bias") {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid std");
            for v in p.tensor_mut(i) {
                *v = normal.sample(rng);
            }
        }
        p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, index: usize) -> &[f64] {
        &self.values[tensor_range(index)]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        let r = tensor_range(index);
        &mut self.values[r]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The temporal-stream encoder and, unless weights are shared, a separate
/// zigzag-stream encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamEncoders {
    pub temporal: EncoderParams,
    pub zigzag: Option<EncoderParams>,
}

impl StreamEncoders {
    pub fn shared(params: EncoderParams) -> Self {
        StreamEncoders {
            temporal: params,
            zigzag: None,
        }
    }

    pub fn is_shared(&self) -> bool {
        self.zigzag.is_none()
    }

    pub fn zigzag(&self) -> &EncoderParams {
        self.zigzag.as_ref().unwrap_or(&self.temporal)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamsMeta {
    shared: bool,
    tensors: Vec<TensorEntry>,
}

/// Writes encoders as a VXG-style file: header line with `dims = [sets, count, 1, 1]`
/// and an `f32` payload.
pub fn write_params(enc: &StreamEncoders, path: &Path) -> Result<()> {
    let sets: Vec<&EncoderParams> = match &enc.zigzag {
        None => vec![&enc.temporal],
        Some(z) => vec![&enc.temporal, z],
    };
    let mut header = Header::new(
        crate::grid::Dims::new(sets.len(), param_count(), 1, 1)?,
        crate::io::Dtype::F32,
    );
    let meta = ParamsMeta {
        shared: enc.is_shared(),
        tensors: LAYOUT
            .iter()
            .map(|(n, s)| TensorEntry {
                name: n.to_string(),
                shape: s.to_vec(),
            })
            .collect(),
    };
    header.meta =
        Some(serde_json::to_value(&meta).map_err(|e| Error::MalformedHeader(e.to_string()))?);
    let payload: Vec<u8> = sets
        .iter()
        .flat_map(|p| p.values.iter().flat_map(|v| (*v as f32).to_le_bytes()))
        .collect();
    write_raw(path, &header, &payload)
}

pub fn read_params(path: &Path) -> Result<StreamEncoders> {
    let (header, payload) = read_raw(path)?;
    let meta: ParamsMeta = header
        .meta
        .ok_or_else(|| Error::MalformedHeader("missing parameter layout".into()))
        .and_then(|m| {
            serde_json::from_value(m).map_err(|e| Error::MalformedHeader(e.to_string()))
        })?;
    let layout_ok = meta.tensors.len() == LAYOUT.len()
        && meta
            .tensors
            .iter()
            .zip(LAYOUT.iter())
            .all(|(t, (n, s))| t.name == *n && t.shape == *s);
    if !layout_ok {
        return Err(Error::MalformedHeader(
            "parameter layout does not match this encoder".into(),
        ));
    }
    let sets = if meta.shared { 1 } else { 2 };
    if header.dims != [sets, param_count(), 1, 1] {
        return Err(Error::MalformedHeader(format!(
            "unexpected dims {:?}",
            header.dims
        )));
    }
    let expected = sets * param_count() * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let mut values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let zig = values.split_off(param_count());
    let temporal = EncoderParams::from_values(values)?;
    let zigzag = if meta.shared {
        None
    } else {
        Some(EncoderParams::from_values(zig)?)
    };
    Ok(StreamEncoders { temporal, zigzag })
}
