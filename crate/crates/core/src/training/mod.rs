//! Maximum-likelihood training.

mod loss;
mod optim;
mod sink;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{compute_gradients, nll_loss, BatchGradients, NllLoss};
pub use optim::{clip_gradients, grad_norm, Adam, AdamConfig};
pub use sink::{CheckpointSink, NdjsonSink, NullSink, ProgressSink};

use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::FeaturePyramid;
use crate::flow::FlowModel;
use crate::tensor::{stack_max_abs, stack_max_abs_diff, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    /// Train on a seeded random subset of this many samples.
    pub shot_limit: Option<usize>,
    /// Epoch interval of the invertibility probe; 0 disables it.
    pub probe_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 240,
            grad_clip_norm: 1.0,
            shot_limit: None,
            probe_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CsFlowError::InvalidConfig(m.into()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !positive(self.learning_rate) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !positive(self.adam_eps) {
            return bad("adam_eps must be positive");
        }
        if !positive(self.grad_clip_norm) {
            return bad("grad_clip_norm must be positive");
        }
        if self.shot_limit == Some(0) {
            return bad("shot_limit must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the per-step batch losses.
    pub mean_nll: f64,
    /// Mean over the epoch's steps of the gradient norm before clipping.
    pub grad_norm_pre_clip: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Result of an invertibility probe after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub epoch: usize,
    /// `max |f^-1(f(y)) - y| / (1 + max |y|)` over the probe batch.
    pub relative_error: f64,
}

/// Tolerance of the training-time invertibility probe.
pub const PROBE_TOLERANCE: f64 = 1e-4;
const PROBE_SAMPLES: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub probes: Vec<ProbeRecord>,
    /// Index into the input dataset of every sample used.
    pub sample_indices: Vec<usize>,
}

impl TrainHistory {
    pub fn mean_nll(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_nll).collect()
    }
}

/// Model plus optimizer state for a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: FlowModel,
    pub optimizer: Adam,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(model: FlowModel, cfg: &TrainConfig) -> Self {
        let n = model.num_parameters();
        Self { model, optimizer: Adam::new(cfg.adam(), n), history: TrainHistory::default() }
    }
}

/// Seeded selection of the training subset: all indices, or the first
/// `shot_limit` of a seeded shuffle.
pub fn select_samples(n: usize, shot_limit: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    match shot_limit {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => idx,
    }
}

/// Visiting order of the samples in `epoch` (0-based).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains `model` on `data`. The data is assumed to be all-normal.
pub fn train(
    model: FlowModel,
    data: &[FeaturePyramid],
    cfg: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> Result<TrainState> {
    let mut state = TrainState::new(model, cfg);
    let tensors: Vec<Vec<Tensor>> = data.iter().map(FeaturePyramid::to_tensors).collect();
    train_tensors(&mut state, &tensors, cfg, sink)?;
    Ok(state)
}

pub(crate) fn train_tensors(
    state: &mut TrainState,
    data: &[Vec<Tensor>],
    cfg: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CsFlowError::Empty("training set".into()));
    }
    for y in data {
        state.model.check_input(y)?;
    }
    let selected = select_samples(data.len(), cfg.shot_limit, cfg.seed);
    let samples: Vec<&[Tensor]> = selected.iter().map(|&i| data[i].as_slice()).collect();
    state.history.sample_indices = selected;

    let kinds = state.model.parameter_kinds();
    let mut params = state.model.parameters();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[Tensor]> = chunk.iter().map(|&i| samples[i]).collect();
            let mut g = loss::batch_gradients(&state.model, &batch).map_err(|e| at_epoch(e, epoch + 1))?;
            loss_sum += g.loss * batch.len() as f64;
            norm_sum += clip_gradients(&mut g.grads, cfg.grad_clip_norm);
            steps += 1;
            state.optimizer.step(&mut params, &g.grads, &kinds);
            state.model.set_parameters(&params)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_nll: loss_sum / samples.len() as f64,
            grad_norm_pre_clip: norm_sum / steps as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if cfg.probe_every > 0 && (epoch + 1) % cfg.probe_every == 0 {
            let probe = probe_invertibility(&state.model, &samples, epoch + 1)?;
            state.history.probes.push(probe);
        }
        sink.on_epoch(&record, &state.model)?;
        state.history.epochs.push(record);
    }
    sink.on_complete(&state.model, &state.history)?;
    Ok(())
}

fn at_epoch(e: CsFlowError, epoch: usize) -> CsFlowError {
    match e {
        CsFlowError::NonFinite { block, .. } => CsFlowError::NonFinite { block, epoch: Some(epoch) },
        other => other,
    }
}

fn probe_invertibility(model: &FlowModel, samples: &[&[Tensor]], epoch: usize) -> Result<ProbeRecord> {
    let mut worst: f64 = 0.0;
    for y in samples.iter().take(PROBE_SAMPLES) {
        let z = model.forward_tensors(y).map_err(|e| at_epoch(e, epoch))?;
        let back = model.inverse(&z.latent)?;
        worst = worst.max(stack_max_abs_diff(&back, y) / (1.0 + stack_max_abs(y)));
    }
    if worst.is_nan() || worst >= PROBE_TOLERANCE {
        return Err(CsFlowError::Invariant(format!(
            "invertibility probe failed after epoch {epoch}: relative error {worst:e}"
        )));
    }
    Ok(ProbeRecord { epoch, relative_error: worst })
}
