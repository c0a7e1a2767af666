//! Per-pixel embedding encoder: a three-layer conv stack with a gated
//! recurrence along the stream axis, trained with a cosine embedding loss.

mod infer;
mod loss;
mod net;
mod params;
mod train;

pub use infer::infer_field;
pub use loss::{cosine_similarity, embedding_loss, LossOutput};
pub use net::{EmbeddedFrame, NORM_FLOOR};
pub use params::{
    param_count, read_params, write_params, EncoderParams, StreamEncoders, LAYOUT, STATE_CHANNELS,
};
pub use train::{loss_and_gradient, train, IterationLoss, Optimizer, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::streams::StreamSample;

/// Embeds every frame of `sample`: unit-norm 14-d vectors and foreground scores.
pub fn embed_window(params: &EncoderParams, sample: &StreamSample) -> Result<Vec<EmbeddedFrame>> {
    let frames: Vec<&[f32]> = sample.frames.iter().map(Vec::as_slice).collect();
    Ok(net::forward_window(params, &frames, sample.height, sample.width)?.outputs)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{Dims, VoxelGrid};
    use crate::streams::{extract_sample, temporal_path};

    fn random_sample(rng: &mut ChaCha8Rng, h: usize, w: usize, steps: usize) -> StreamSample {
        let dims = Dims::new(steps, 1, h, w).unwrap();
        let data = (0..dims.len())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let grid = VoxelGrid::new(dims, data).unwrap();
        extract_sample(&grid, None, &temporal_path(0, 0, steps)).unwrap()
    }

    #[test]
    fn zero_weights_give_fallback_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample = random_sample(&mut rng, 5, 4, 3);
        let out = embed_window(&EncoderParams::zeros(), &sample).unwrap();
        for f in &out {
            for p in 0..20 {
                let v = f.vector(p);
                assert_eq!(v[0], 1.0);
                assert!(v[1..].iter().all(|x| *x == 0.0));
                assert_eq!(f.fg_scores[p], 0.5);
            }
        }
    }

    #[test]
    fn outputs_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::random(&mut rng);
        let sample = random_sample(&mut rng, 7, 6, 4);
        for f in embed_window(&params, &sample).unwrap() {
            for p in 0..42 {
                let n: f64 = f.vector(p).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
                assert!((0.0..=1.0).contains(&f.fg_scores[p]));
            }
        }
    }

    #[test]
    fn closed_gate_repeats_state_for_identical_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = EncoderParams::random(&mut rng);
        for b in params.tensor_mut(params::GATE_B) {
            *b = -60.0;
        }
        let dims = Dims::new(4, 1, 4, 4).unwrap();
        let frame: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let data = frame.iter().cycle().take(dims.len()).copied().collect();
        let grid = VoxelGrid::new(dims, data).unwrap();
        let sample = extract_sample(&grid, None, &temporal_path(0, 0, 4)).unwrap();
        let frames: Vec<&[f32]> = sample.frames.iter().map(Vec::as_slice).collect();
        let fwd = net::forward_window(&params, &frames, 4, 4).unwrap();
        let hidden = net::hidden_states(&fwd);
        for h in &hidden[1..] {
            let diff = (h - &hidden[0]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "state drifted by {diff}");
        }
    }
}
