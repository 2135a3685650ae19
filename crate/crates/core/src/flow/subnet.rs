//! The regressor inside each coupling step.
//!
//! Two convolution levels. Level one maps each scale's half-tensor to the
//! hidden width and applies a leaky ReLU. Level two produces `C` channels
//! per scale as the sum of a same-scale convolution, the upsampled output of
//! a convolution on the next coarser scale, and a stride-2 convolution of the
//! next finer scale. The first `C/2` output channels are the (soft-clamped)
//! log-scale, the rest the shift.

use rand_chacha::ChaCha8Rng;

use super::clamp::soft_clamp;
use super::conv::Conv2d;
use super::params::{ParamKind, Parameterized};
use super::resample::{resize_bilinear_backward, upsample2};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossScaleSubnet {
    level1: Vec<Conv2d>,
    same: Vec<Conv2d>,
    /// `from_coarser[i]` runs on hidden scale `i + 1`, is upsampled and added to output `i`.
    from_coarser: Vec<Conv2d>,
    /// `from_finer[i]` runs with stride 2 on hidden scale `i` and is added to output `i + 1`.
    from_finer: Vec<Conv2d>,
    leaky_slope: f64,
    alpha: f64,
}

/// Per-scale scale and shift parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetOutput {
    /// Unclamped log-scale activations.
    pub raw_scale: Vec<Tensor>,
    /// Soft-clamped log-scale, strictly inside `(-alpha, alpha)`.
    pub scale: Vec<Tensor>,
    pub shift: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub(crate) struct SubnetCache {
    inputs: Vec<Tensor>,
    pre_act: Vec<Tensor>,
    hidden: Vec<Tensor>,
}

impl CrossScaleSubnet {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn init(
        num_scales: usize,
        half: usize,
        hidden: usize,
        kernel: usize,
        leaky_slope: f64,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let out = 2 * half;
        let level1 = (0..num_scales).map(|_| Conv2d::init_uniform(half, hidden, kernel, 1, rng)).collect();
        let same = (0..num_scales).map(|_| Conv2d::init_uniform(hidden, out, kernel, 1, rng)).collect();
        let from_coarser = (1..num_scales).map(|_| Conv2d::init_uniform(hidden, out, kernel, 1, rng)).collect();
        let from_finer = (1..num_scales).map(|_| Conv2d::init_uniform(hidden, out, kernel, 2, rng)).collect();
        Self { level1, same, from_coarser, from_finer, leaky_slope, alpha }
    }

    pub fn num_scales(&self) -> usize {
        self.level1.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Level-one convolutions, one per scale.
    pub fn level1_mut(&mut self) -> &mut [Conv2d] {
        &mut self.level1
    }

    /// All convolutions, in parameter order.
    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.level1.iter().chain(&self.same).chain(&self.from_coarser).chain(&self.from_finer)
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.level1
            .iter_mut()
            .chain(self.same.iter_mut())
            .chain(self.from_coarser.iter_mut())
            .chain(self.from_finer.iter_mut())
    }

    /// Evaluates the regressor: per-scale clamped log-scale and shift.
    pub fn eval(&self, inputs: &[Tensor]) -> SubnetOutput {
        let (raw, _) = self.forward_cached(inputs);
        self.split_output(raw)
    }

    pub(crate) fn split_output(&self, raw: Vec<Tensor>) -> SubnetOutput {
        let mut raw_scale = Vec::with_capacity(raw.len());
        let mut scale = Vec::with_capacity(raw.len());
        let mut shift = Vec::with_capacity(raw.len());
        for out in raw {
            let half = out.channels() / 2;
            let (s, t) = out.split_channels(half);
            scale.push(s.map(|h| soft_clamp(h, self.alpha)));
            raw_scale.push(s);
            shift.push(t);
        }
        SubnetOutput { raw_scale, scale, shift }
    }

    /// Returns the raw `C`-channel output per scale plus what backward needs.
    pub(crate) fn forward_cached(&self, inputs: &[Tensor]) -> (Vec<Tensor>, SubnetCache) {
        assert_eq!(inputs.len(), self.num_scales(), "subnet scale count");
        let slope = self.leaky_slope;
        let pre_act: Vec<Tensor> = self.level1.iter().zip(inputs).map(|(conv, x)| conv.forward(x)).collect();
        let hidden: Vec<Tensor> = pre_act.iter().map(|p| p.map(|v| if v >= 0.0 { v } else { slope * v })).collect();

        let mut out: Vec<Tensor> = self.same.iter().zip(&hidden).map(|(conv, h)| conv.forward(h)).collect();
        for i in 0..self.num_scales().saturating_sub(1) {
            let up = upsample2(&self.from_coarser[i].forward(&hidden[i + 1]));
            out[i].add_assign(&up);
            let down = self.from_finer[i].forward(&hidden[i]);
            out[i + 1].add_assign(&down);
        }
        (out, SubnetCache { inputs: inputs.to_vec(), pre_act, hidden })
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the raw output per scale).
    /// `grads` is this subnet's contiguous parameter-gradient slice.
    pub(crate) fn backward(&self, cache: &SubnetCache, grad_out: &[Tensor], grads: &mut [f64]) -> Vec<Tensor> {
        let s = self.num_scales();
        let mut slices = split_param_grads(self.convs(), grads);
        let (l1_g, rest) = slices.split_at_mut(s);
        let (same_g, rest) = rest.split_at_mut(s);
        let (coarse_g, finer_g) = rest.split_at_mut(s - 1);

        let mut grad_hidden: Vec<Tensor> = self
            .same
            .iter()
            .zip(&cache.hidden)
            .zip(grad_out)
            .zip(same_g.iter_mut())
            .map(|(((conv, h), g), pg)| conv.backward(h, g, pg))
            .collect();
        for i in 0..s.saturating_sub(1) {
            let coarse_h = &cache.hidden[i + 1];
            let g_conv = resize_bilinear_backward(&grad_out[i], coarse_h.height(), coarse_h.width());
            let gh = self.from_coarser[i].backward(coarse_h, &g_conv, coarse_g[i]);
            grad_hidden[i + 1].add_assign(&gh);
            let gh = self.from_finer[i].backward(&cache.hidden[i], &grad_out[i + 1], finer_g[i]);
            grad_hidden[i].add_assign(&gh);
        }

        let slope = self.leaky_slope;
        grad_hidden
            .into_iter()
            .enumerate()
            .map(|(i, mut gh)| {
                for (g, p) in gh.data_mut().iter_mut().zip(cache.pre_act[i].data()) {
                    if *p < 0.0 {
                        *g *= slope;
                    }
                }
                self.level1[i].backward(&cache.inputs[i], &gh, l1_g[i])
            })
            .collect()
    }
}

/// Splits a contiguous gradient buffer into one slice per conv.
fn split_param_grads<'a, 'b>(convs: impl Iterator<Item = &'a Conv2d>, mut grads: &'b mut [f64]) -> Vec<&'b mut [f64]> {
    let mut out = Vec::new();
    for conv in convs {
        let (head, tail) = grads.split_at_mut(conv.num_params());
        out.push(head);
        grads = tail;
    }
    assert!(grads.is_empty(), "gradient buffer larger than subnet");
    out
}

impl Parameterized for CrossScaleSubnet {
    fn num_params(&self) -> usize {
        self.convs().map(Conv2d::num_params).sum()
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        for c in self.convs() {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        for c in self.convs_mut() {
            c.visit_mut(f);
        }
    }
}
