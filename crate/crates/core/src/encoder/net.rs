//! Forward and backward passes of the per-stream encoder.
//!
//! Per frame `i` the conv stack produces features `f_i` (15 channels). The
//! recurrent state is
//!
//! ```text
//! g_i = W_g h_{i-1} + b_g
//! h_i = σ(g_i) ⊙ h_{i-1} + (1 − σ(g_i)) ⊙ f_i,     h_{-1} = 0
//! ```
//!
//! Channels 0..14 of `h_i` are L2-normalized into the embedding, channel 14 is
//! the foreground logit. Activations are channel-major `C × (H·W)` matrices.

use ndarray::{Array2, ArrayView2, Axis};

use super::params::{
    tensor_range, EncoderParams, CONV1_W, CONV_CHANNELS, GATE_B, GATE_W, STATE_CHANNELS,
};
use crate::error::{Error, Result};
use crate::STREAM_EMBEDDING_DIM;

/// Pre-normalization norms below this map to the fallback direction `(1, 0, ..., 0)`.
pub const NORM_FLOOR: f64 = 1e-8;

/// Embeddings and foreground scores of one frame, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedFrame {
    pub height: usize,
    pub width: usize,
    /// `H·W × 14`, unit norm per pixel.
    pub vectors: Vec<f64>,
    pub fg_scores: Vec<f64>,
}

impl EmbeddedFrame {
    pub fn vector(&self, p: usize) -> &[f64] {
        &self.vectors[p * STREAM_EMBEDDING_DIM..(p + 1) * STREAM_EMBEDDING_DIM]
    }
}

/// `tanh` through one `exp`; accurate to a few ulps, much cheaper than libm.
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 3×3 zero-padded patches: row `c·9 + ky·3 + kx`, one column per pixel.
/// Valid destination and source column ranges for a horizontal tap `kx`.
fn tap_columns(kx: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    match kx {
        0 => (1..w, 0..w - 1),
        1 => (0..w, 0..w),
        _ => (0..w - 1, 1..w),
    }
}

fn im2col(input: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let c_in = input.nrows();
    let mut cols = Vec::with_capacity(c_in * 9 * h * w);
    for c in 0..c_in {
        let src = input.row(c);
        let src = src.as_slice().expect("contiguous row");
        for ky in 0..3 {
            for kx in 0..3 {
                let (dx, sx) = tap_columns(kx, w);
                for y in 0..h {
                    match (y + ky).checked_sub(1).filter(|sy| *sy < h) {
                        None => cols.extend(std::iter::repeat_n(0.0, w)),
                        Some(sy) => {
                            cols.extend(std::iter::repeat_n(0.0, dx.start));
                            cols.extend_from_slice(&src[sy * w + sx.start..sy * w + sx.end]);
                            cols.extend(std::iter::repeat_n(0.0, w - dx.end));
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c_in * 9, h * w), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, c_in: usize, h: usize, w: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((c_in, h * w));
    for c in 0..c_in {
        let mut dst = out.row_mut(c);
        let dst = dst.as_slice_mut().expect("contiguous row");
        for ky in 0..3 {
            for kx in 0..3 {
                let src = cols.row(c * 9 + ky * 3 + kx);
                let src = src.as_slice().expect("contiguous row");
                let (dx, sx) = tap_columns(kx, w);
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|sy| *sy < h) else {
                        continue;
                    };
                    for (d, v) in dst[sy * w + sx.start..sy * w + sx.end]
                        .iter_mut()
                        .zip(&src[y * w + dx.start..y * w + dx.end])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}

fn weight_view(params: &EncoderParams, layer: usize) -> ArrayView2<'_, f64> {
    let (c_in, c_out) = CONV_CHANNELS[layer];
    ArrayView2::from_shape((c_out, c_in * 9), params.tensor(CONV1_W + 2 * layer)).expect("layout")
}

fn add_bias(z: &mut Array2<f64>, bias: &[f64]) {
    for (mut row, b) in z.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
}

pub(crate) struct FrameActivations {
    a1: Array2<f64>,
    a2: Array2<f64>,
    features: Array2<f64>,
}

fn conv_forward(params: &EncoderParams, frame: &[f32], h: usize, w: usize) -> FrameActivations {
    let x0 = Array2::from_shape_vec((1, h * w), frame.iter().map(|v| *v as f64).collect())
        .expect("frame size");
    let mut a1 = weight_view(params, 0).dot(&im2col(&x0, h, w));
    add_bias(&mut a1, params.tensor(CONV1_W + 1));
    a1.mapv_inplace(tanh);
    let mut a2 = weight_view(params, 1).dot(&im2col(&a1, h, w));
    add_bias(&mut a2, params.tensor(CONV1_W + 3));
    a2.mapv_inplace(tanh);
    let mut features = weight_view(params, 2).dot(&im2col(&a2, h, w));
    add_bias(&mut features, params.tensor(CONV1_W + 5));
    FrameActivations { a1, a2, features }
}

/// Adds the parameter gradient of the conv stack for one frame into `grad`.
fn conv_backward(
    params: &EncoderParams,
    frame: &[f32],
    h: usize,
    w: usize,
    act: &FrameActivations,
    d_features: &Array2<f64>,
    grad: &mut [f64],
) {
    let x0 = Array2::from_shape_vec((1, h * w), frame.iter().map(|v| *v as f64).collect())
        .expect("frame size");
    let inputs = [
        im2col(&x0, h, w),
        im2col(&act.a1, h, w),
        im2col(&act.a2, h, w),
    ];
    let mut dz = d_features.clone();
    for layer in (0..3).rev() {
        let (c_in, _) = CONV_CHANNELS[layer];
        let dw = dz.dot(&inputs[layer].t());
        for (g, v) in grad[tensor_range(CONV1_W + 2 * layer)]
            .iter_mut()
            .zip(dw.iter())
        {
            *g += v;
        }
        for (g, row) in grad[tensor_range(CONV1_W + 2 * layer + 1)]
            .iter_mut()
            .zip(dz.axis_iter(Axis(0)))
        {
            *g += row.sum();
        }
        if layer == 0 {
            break;
        }
        let dcols = weight_view(params, layer).t().dot(&dz);
        let mut da = col2im(&dcols, c_in, h, w);
        let a = if layer == 2 { &act.a2 } else { &act.a1 };
        da.zip_mut_with(a, |d, &y| *d *= 1.0 - y * y);
        dz = da;
    }
}

pub(crate) struct StepState {
    gate: Array2<f64>,
    hidden: Array2<f64>,
}

/// Everything the backward pass needs from one forward run over a window.
pub(crate) struct WindowForward {
    pub height: usize,
    pub width: usize,
    frames: Vec<FrameActivations>,
    steps: Vec<StepState>,
    pub outputs: Vec<EmbeddedFrame>,
}

fn gate_view(params: &EncoderParams) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((STATE_CHANNELS, STATE_CHANNELS), params.tensor(GATE_W)).expect("layout")
}

fn frame_output(hidden: &Array2<f64>, h: usize, w: usize) -> EmbeddedFrame {
    let n = h * w;
    let d = STREAM_EMBEDDING_DIM;
    let mut vectors = vec![0.0; n * d];
    let mut fg_scores = vec![0.0; n];
    for p in 0..n {
        let col = hidden.column(p);
        let norm = (0..d).map(|c| col[c] * col[c]).sum::<f64>().sqrt();
        let out = &mut vectors[p * d..(p + 1) * d];
        if norm < NORM_FLOOR {
            out[0] = 1.0;
        } else {
            for c in 0..d {
                out[c] = col[c] / norm;
            }
        }
        fg_scores[p] = sigmoid(col[d]);
    }
    EmbeddedFrame {
        height: h,
        width: w,
        vectors,
        fg_scores,
    }
}

pub(crate) fn forward_window(
    params: &EncoderParams,
    frames: &[&[f32]],
    h: usize,
    w: usize,
) -> Result<WindowForward> {
    let n = h * w;
    let mut acts = Vec::with_capacity(frames.len());
    let mut steps: Vec<StepState> = Vec::with_capacity(frames.len());
    let mut outputs = Vec::with_capacity(frames.len());
    let gate_w = gate_view(params);
    let gate_b = params.tensor(GATE_B);
    for frame in frames {
        if frame.len() != n {
            return Err(Error::DimsMismatch(format!(
                "frame of {} pixels, expected {n}",
                frame.len()
            )));
        }
        let act = conv_forward(params, frame, h, w);
        let prev = steps.last().map(|s| &s.hidden);
        let mut gate = match prev {
            Some(hp) => gate_w.dot(hp),
            None => Array2::zeros((STATE_CHANNELS, n)),
        };
        add_bias(&mut gate, gate_b);
        gate.mapv_inplace(sigmoid);
        let mut hidden = act.features.clone();
        match prev {
            Some(hp) => {
                ndarray::Zip::from(&mut hidden)
                    .and(&gate)
                    .and(hp)
                    .for_each(|hv, &s, &p| *hv = s * p + (1.0 - s) * *hv);
            }
            None => {
                hidden.zip_mut_with(&gate, |hv, &s| *hv *= 1.0 - s);
            }
        }
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: None,
                what: "non-finite activation".into(),
            });
        }
        outputs.push(frame_output(&hidden, h, w));
        acts.push(act);
        steps.push(StepState { gate, hidden });
    }
    Ok(WindowForward {
        height: h,
        width: w,
        frames: acts,
        steps,
        outputs,
    })
}

/// Backpropagates per-step output gradients to the parameters.
///
/// `d_vectors[i]` is the gradient w.r.t. the normalized embeddings of step `i`
/// (pixel-major) and `d_logits[i]` the gradient w.r.t. the foreground logit.
pub(crate) fn backward_window(
    params: &EncoderParams,
    frames: &[&[f32]],
    fwd: &WindowForward,
    d_vectors: &[Vec<f64>],
    d_logits: &[Vec<f64>],
) -> Vec<f64> {
    let (h, w) = (fwd.height, fwd.width);
    let n = h * w;
    let d = STREAM_EMBEDDING_DIM;
    let gate_w = gate_view(params);
    let mut grad = vec![0.0; params.values().len()];
    let mut dh_next = Array2::<f64>::zeros((STATE_CHANNELS, n));
    for i in (0..fwd.steps.len()).rev() {
        let step = &fwd.steps[i];
        let mut dh = dh_next;
        let out = &fwd.outputs[i];
        for p in 0..n {
            let col = step.hidden.column(p);
            let norm = (0..d).map(|c| col[c] * col[c]).sum::<f64>().sqrt();
            if norm >= NORM_FLOOR {
                let e = out.vector(p);
                let de = &d_vectors[i][p * d..(p + 1) * d];
                let proj: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
                for c in 0..d {
                    dh[[c, p]] += (de[c] - e[c] * proj) / norm;
                }
            }
            dh[[d, p]] += d_logits[i][p];
        }

        let zero;
        let prev = if i > 0 {
            &fwd.steps[i - 1].hidden
        } else {
            zero = Array2::<f64>::zeros((STATE_CHANNELS, n));
            &zero
        };
        let features = &fwd.frames[i].features;
        let mut d_features = dh.clone();
        d_features.zip_mut_with(&step.gate, |v, &s| *v *= 1.0 - s);
        let mut d_gate = dh.clone();
        ndarray::Zip::from(&mut d_gate)
            .and(&step.gate)
            .and(prev)
            .and(features)
            .for_each(|dg, &s, &hp, &f| *dg *= (hp - f) * s * (1.0 - s));

        let dw = d_gate.dot(&prev.t());
        for (g, v) in grad[tensor_range(GATE_W)].iter_mut().zip(dw.iter()) {
            *g += v;
        }
        for (g, row) in grad[tensor_range(GATE_B)]
            .iter_mut()
            .zip(d_gate.axis_iter(Axis(0)))
        {
            *g += row.sum();
        }

        let mut carry = gate_w.t().dot(&d_gate);
        ndarray::Zip::from(&mut carry)
            .and(&dh)
            .and(&step.gate)
            .for_each(|c, &g, &s| *c += g * s);
        dh_next = carry;

        conv_backward(
            params,
            frames[i],
            h,
            w,
            &fwd.frames[i],
            &d_features,
            &mut grad,
        );
    }
    grad
}

/// Recurrent state after every step.
#[cfg(test)]
pub(crate) fn hidden_states(fwd: &WindowForward) -> Vec<Array2<f64>> {
    fwd.steps.iter().map(|s| s.hidden.clone()).collect()
}
