use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{embedding_loss, LossOutput};
use super::net::{backward_window, forward_window};
use super::params::{EncoderParams, StreamEncoders};
use crate::error::{Error, Result};
use crate::grid::{InstanceLabeling, VoxelGrid};
use crate::streams::{extract_sample, temporal_paths, zigzag_paths, StreamPath, StreamSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Learning rate for the first half of the run.
    pub lr_initial: f64,
    /// Learning rate from `iterations / 2` on.
    pub lr_after_half: f64,
    pub window: usize,
    pub stride: usize,
    pub pull_weight: f64,
    pub push_weight: f64,
    /// Instances whose masks come within this many pixels are pushed apart.
    pub neighbor_radius: f64,
    pub rng_seed: u64,
    pub shared_weights: bool,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2_000,
            lr_initial: 1e-4,
            lr_after_half: 1e-5,
            window: crate::streams::DEFAULT_WINDOW,
            stride: crate::streams::DEFAULT_STRIDE,
            pull_weight: 1.0,
            push_weight: 1.0,
            neighbor_radius: 10.0,
            rng_seed: 0,
            shared_weights: true,
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be > 0".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_after_half > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("window and stride must be ≥ 1".into()));
        }
        if self.pull_weight < 0.0 || self.push_weight < 0.0 || self.neighbor_radius < 0.0 {
            return Err(Error::InvalidConfig(
                "loss weights and radius must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if iteration < self.iterations / 2 {
            self.lr_initial
        } else {
            self.lr_after_half
        }
    }
}

/// Runs the encoder over `sample` and returns the loss with its gradient
/// w.r.t. every parameter (flat, in layout order).
pub fn loss_and_gradient(
    params: &EncoderParams,
    sample: &StreamSample,
    cfg: &TrainConfig,
) -> Result<(LossOutput, Vec<f64>)> {
    let labels = sample.labels.as_ref().ok_or(Error::NoValidLabels)?;
    let frames: Vec<&[f32]> = sample.frames.iter().map(Vec::as_slice).collect();
    let fwd = forward_window(params, &frames, sample.height, sample.width)?;
    let loss = embedding_loss(&fwd.outputs, labels, &sample.valid_label_mask, cfg)?;
    let grad = backward_window(
        params,
        &frames,
        &fwd,
        &loss.grad_vectors,
        &loss.grad_fg_logits,
    );
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLoss {
    pub iteration: usize,
    /// Mean total loss of the temporal and zigzag windows.
    pub loss: f64,
    pub pull: f64,
    pub push: f64,
    pub fg_bce: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub encoders: StreamEncoders,
    pub history: Vec<IterationLoss>,
}

impl TrainOutcome {
    /// `iteration,loss` rows with a header line.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for h in &self.history {
            out.push_str(&format!("{},{}\n", h.iteration, h.loss));
        }
        out
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        OptimizerState {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    fn apply(&mut self, params: &mut EncoderParams, grad: &[f64], lr: f64) {
        let values = params.values_mut();
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in values.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((p, g), m), v) in values
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn annotated_paths(paths: Vec<StreamPath>, labeling: &InstanceLabeling) -> Vec<StreamPath> {
    paths
        .into_iter()
        .filter(|p| {
            p.coords
                .iter()
                .any(|&(t, z)| labeling.annotation().is_annotated(t, z))
        })
        .collect()
}

/// Trains the stream encoders; every iteration draws one temporal and one
/// zigzag window that contain at least one annotated slice.
pub fn train(
    grid: &VoxelGrid,
    labeling: &InstanceLabeling,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = grid.dims();
    if labeling.dims() != dims {
        return Err(Error::DimsMismatch(format!(
            "grid {dims} vs labeling {}",
            labeling.dims()
        )));
    }
    let temporal = annotated_paths(temporal_paths(dims, cfg.window, cfg.stride)?, labeling);
    let zigzag = annotated_paths(zigzag_paths(dims, cfg.window, cfg.stride)?, labeling);
    if temporal.is_empty() || zigzag.is_empty() {
        return Err(Error::NoValidLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut temporal_params = EncoderParams::random(&mut rng);
    let mut zigzag_params = (!cfg.shared_weights).then(|| EncoderParams::random(&mut rng));
    let n = temporal_params.values().len();
    let mut temporal_opt = OptimizerState::new(cfg.optimizer, n);
    let mut zigzag_opt = OptimizerState::new(cfg.optimizer, n);

    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let lr = cfg.learning_rate(iteration);
        let tp = &temporal[rng.random_range(0..temporal.len())];
        let zp = &zigzag[rng.random_range(0..zigzag.len())];

        let t_sample = extract_sample(grid, Some(labeling), tp)?;
        let z_sample = extract_sample(grid, Some(labeling), zp)?;
        let diverged = |e: Error| match e {
            Error::Divergence { what, .. } => Error::Divergence {
                iteration: Some(iteration),
                what,
            },
            other => other,
        };
        let (t_loss, mut t_grad) =
            loss_and_gradient(&temporal_params, &t_sample, cfg).map_err(diverged)?;
        let (z_loss, z_grad) = loss_and_gradient(
            zigzag_params.as_ref().unwrap_or(&temporal_params),
            &z_sample,
            cfg,
        )
        .map_err(diverged)?;

        let record = IterationLoss {
            iteration,
            loss: 0.5 * (t_loss.total + z_loss.total),
            pull: 0.5 * (t_loss.pull + z_loss.pull),
            push: 0.5 * (t_loss.push + z_loss.push),
            fg_bce: 0.5 * (t_loss.fg_bce + z_loss.fg_bce),
        };
        if !record.loss.is_finite() || t_grad.iter().chain(&z_grad).any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: Some(iteration),
                what: "non-finite loss or gradient".into(),
            });
        }
        history.push(record);

        match zigzag_params.as_mut() {
            None => {
                for (a, b) in t_grad.iter_mut().zip(&z_grad) {
                    *a += b;
                }
                temporal_opt.apply(&mut temporal_params, &t_grad, lr);
            }
            Some(zp) => {
                temporal_opt.apply(&mut temporal_params, &t_grad, lr);
                zigzag_opt.apply(zp, &z_grad, lr);
            }
        }
        if !temporal_params.is_finite() || zigzag_params.as_ref().is_some_and(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                iteration: Some(iteration),
                what: "non-finite parameters".into(),
            });
        }
    }

    Ok(TrainOutcome {
        encoders: StreamEncoders {
            temporal: temporal_params,
            zigzag: zigzag_params,
        },
        history,
    })
}
