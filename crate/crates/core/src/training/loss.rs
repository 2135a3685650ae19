use rayon::prelude::*;

use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::FeaturePyramid;
use crate::flow::{FlowModel, LatentResult, Parameterized};
use crate::tensor::{stack_sum_squares, Tensor};

/// Negative log-likelihood of a latent result, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllLoss {
    /// `||z||^2 / 2 - logdet`.
    pub unnormalized: f64,
    /// Element count of the pyramid.
    pub dims: usize,
}

impl NllLoss {
    /// Per-dimension loss, the training objective.
    pub fn normalized(&self) -> f64 {
        self.unnormalized / self.dims as f64
    }
}

pub fn nll_loss(latent: &LatentResult) -> NllLoss {
    NllLoss { unnormalized: 0.5 * stack_sum_squares(&latent.latent) - latent.logdet, dims: latent.total_len() }
}

/// Mean normalized loss and its gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss: f64,
    /// Flat parameter order of the model.
    pub grads: Vec<f64>,
}

/// Exact gradients of the batch-mean normalized NLL.
pub fn compute_gradients(model: &FlowModel, batch: &[FeaturePyramid]) -> Result<BatchGradients> {
    for y in batch {
        model.check_signature(&y.signature())?;
    }
    let tensors: Vec<Vec<Tensor>> = batch.iter().map(FeaturePyramid::to_tensors).collect();
    let refs: Vec<&[Tensor]> = tensors.iter().map(Vec::as_slice).collect();
    batch_gradients(model, &refs)
}

pub(crate) fn batch_gradients(model: &FlowModel, batch: &[&[Tensor]]) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(CsFlowError::Empty("gradient batch".into()));
    }
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = batch.par_iter().map(|y| sample_gradients(model, y)).collect();
    let n = model.num_params();
    let mut grads = vec![0.0; n];
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= scale);
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CsFlowError::NonFinite { block: block_of_param(model, i), epoch: None });
    }
    Ok(BatchGradients { loss: loss * scale, grads })
}

fn sample_gradients(model: &FlowModel, y: &[Tensor]) -> Result<(f64, Vec<f64>)> {
    let (result, cache) = model.forward_cached(y)?;
    let loss = nll_loss(&result);
    if !loss.unnormalized.is_finite() {
        return Err(CsFlowError::NonFinite { block: model.blocks().len() - 1, epoch: None });
    }
    let inv_d = 1.0 / loss.dims as f64;
    let grad_z: Vec<Tensor> = result.latent.iter().map(|z| z.map(|v| v * inv_d)).collect();
    let mut grads = vec![0.0; model.num_params()];
    model.backward(&cache, &grad_z, -inv_d, &mut grads);
    Ok((loss.normalized(), grads))
}

fn block_of_param(model: &FlowModel, index: usize) -> usize {
    let mut end = 0;
    for (b, block) in model.blocks().iter().enumerate() {
        end += block.num_params();
        if index < end {
            return b;
        }
    }
    model.blocks().len().saturating_sub(1)
}
