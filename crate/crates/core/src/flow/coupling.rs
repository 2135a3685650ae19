//! Affine coupling block over all scales at once.
//!
//! Per scale the input is permuted and split into halves `(u, v)`:
//!
//! ```text
//! [s1, t1] = r1(u)        v' = v * exp(g1 * clamp(s1)) + g1 * t1
//! [s2, t2] = r2(v')       u' = u * exp(g2 * clamp(s2)) + g2 * t2
//! ```
//!
//! and the output is `concat(u', v')`, left in the permuted channel order.
//! The log-determinant is the sum of all
//! exponents. `g1`, `g2` start at zero, so a fresh block is a pure channel
//! permutation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::clamp::soft_clamp_grad;
use super::params::{ParamKind, Parameterized};
use super::subnet::{CrossScaleSubnet, SubnetCache, SubnetOutput};
use crate::error::{CsFlowError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    permutations: Vec<Vec<usize>>,
    inverse_permutations: Vec<Vec<usize>>,
    r1: CrossScaleSubnet,
    r2: CrossScaleSubnet,
    /// `[g1, g2]`
    gammas: [f64; 2],
    shared_first_gamma: bool,
}

/// Everything backward needs from one block's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    u: Vec<Tensor>,
    v: Vec<Tensor>,
    r1: SubnetCache,
    out1: SubnetOutput,
    exp1: Vec<Tensor>,
    r2: SubnetCache,
    out2: SubnetOutput,
    exp2: Vec<Tensor>,
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn is_permutation(perm: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    perm.len() == n && perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

impl CouplingBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn init(
        num_scales: usize,
        channels: usize,
        hidden: usize,
        kernel: usize,
        leaky_slope: f64,
        alpha: f64,
        shared_first_gamma: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let permutations: Vec<Vec<usize>> = (0..num_scales)
            .map(|_| {
                let mut p: Vec<usize> = (0..channels).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        let inverse_permutations = permutations.iter().map(|p| invert(p)).collect();
        let half = channels / 2;
        let r1 = CrossScaleSubnet::init(num_scales, half, hidden, kernel, leaky_slope, alpha, rng);
        let r2 = CrossScaleSubnet::init(num_scales, half, hidden, kernel, leaky_slope, alpha, rng);
        Self { permutations, inverse_permutations, r1, r2, gammas: [0.0, 0.0], shared_first_gamma }
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    /// Replaces the per-scale permutations (e.g. when loading a checkpoint).
    pub fn set_permutations(&mut self, permutations: Vec<Vec<usize>>) -> Result<()> {
        let c = self.permutations[0].len();
        if permutations.len() != self.permutations.len() || !permutations.iter().all(|p| is_permutation(p, c)) {
            return Err(CsFlowError::Invariant(
                "permutations must be bijections on the channel indices, one per scale".into(),
            ));
        }
        self.inverse_permutations = permutations.iter().map(|p| invert(p)).collect();
        self.permutations = permutations;
        Ok(())
    }

    pub fn gammas(&self) -> [f64; 2] {
        self.gammas
    }

    pub fn set_gammas(&mut self, gammas: [f64; 2]) {
        self.gammas = gammas;
    }

    pub fn r1(&self) -> &CrossScaleSubnet {
        &self.r1
    }

    pub fn r1_mut(&mut self) -> &mut CrossScaleSubnet {
        &mut self.r1
    }

    pub fn r2(&self) -> &CrossScaleSubnet {
        &self.r2
    }

    pub fn r2_mut(&mut self) -> &mut CrossScaleSubnet {
        &mut self.r2
    }

    /// Coefficient multiplying the second step's log-scale, and the index of
    /// the gamma it belongs to.
    fn second_scale_coeff(&self) -> (f64, usize) {
        if self.shared_first_gamma {
            (self.gammas[0], 0)
        } else {
            (self.gammas[1], 1)
        }
    }

    /// Permutes each scale's channels and splits into halves.
    fn permute_split(&self, x: &[Tensor]) -> (Vec<Tensor>, Vec<Tensor>) {
        x.iter().zip(&self.permutations).map(|(t, p)| t.permute_channels(p).split_channels(t.channels() / 2)).unzip()
    }

    fn split(x: &[Tensor]) -> (Vec<Tensor>, Vec<Tensor>) {
        x.iter().map(|t| t.split_channels(t.channels() / 2)).unzip()
    }

    fn concat(u: &[Tensor], v: &[Tensor]) -> Vec<Tensor> {
        u.iter().zip(v).map(|(a, b)| Tensor::concat_channels(a, b)).collect()
    }

    /// Concatenates halves and undoes the permutation.
    fn concat_unpermute(&self, u: &[Tensor], v: &[Tensor]) -> Vec<Tensor> {
        u.iter()
            .zip(v)
            .zip(&self.inverse_permutations)
            .map(|((a, b), inv)| Tensor::concat_channels(a, b).permute_channels(inv))
            .collect()
    }

    pub fn forward(&self, x: &[Tensor]) -> (Vec<Tensor>, f64) {
        let (out, logdet, _) = self.forward_cached(x);
        (out, logdet)
    }

    pub(crate) fn forward_cached(&self, x: &[Tensor]) -> (Vec<Tensor>, f64, BlockCache) {
        let [g1, g2] = self.gammas;
        let (k2, _) = self.second_scale_coeff();
        let (u, v) = self.permute_split(x);

        let (raw1, r1_cache) = self.r1.forward_cached(&u);
        let out1 = self.r1.split_output(raw1);
        let mut v_new = Vec::with_capacity(v.len());
        let mut exp1 = Vec::with_capacity(v.len());
        let mut logdet = 0.0;
        for i in 0..v.len() {
            let (o, e) = affine(&v[i], &out1.scale[i], &out1.shift[i], g1, g1);
            logdet += g1 * out1.scale[i].sum();
            v_new.push(o);
            exp1.push(e);
        }

        let (raw2, r2_cache) = self.r2.forward_cached(&v_new);
        let out2 = self.r2.split_output(raw2);
        let mut u_new = Vec::with_capacity(u.len());
        let mut exp2 = Vec::with_capacity(u.len());
        for i in 0..u.len() {
            let (o, e) = affine(&u[i], &out2.scale[i], &out2.shift[i], k2, g2);
            logdet += k2 * out2.scale[i].sum();
            u_new.push(o);
            exp2.push(e);
        }

        let out = Self::concat(&u_new, &v_new);
        let cache = BlockCache { u, v, r1: r1_cache, out1, exp1, r2: r2_cache, out2, exp2 };
        (out, logdet, cache)
    }

    pub fn inverse(&self, z: &[Tensor]) -> Vec<Tensor> {
        let [g1, g2] = self.gammas;
        let (k2, _) = self.second_scale_coeff();
        let (u_new, v_new) = Self::split(z);
        let out2 = self.r2.eval(&v_new);
        let u: Vec<Tensor> =
            (0..u_new.len()).map(|i| affine_inverse(&u_new[i], &out2.scale[i], &out2.shift[i], k2, g2)).collect();
        let out1 = self.r1.eval(&u);
        let v: Vec<Tensor> =
            (0..v_new.len()).map(|i| affine_inverse(&v_new[i], &out1.scale[i], &out1.shift[i], g1, g1)).collect();
        self.concat_unpermute(&u, &v)
    }

    /// Given the gradient of the loss w.r.t. this block's output and the
    /// loss weight on its log-determinant, accumulates parameter gradients
    /// into `grads` and returns the gradient w.r.t. the block input.
    pub(crate) fn backward(
        &self,
        cache: &BlockCache,
        grad_out: &[Tensor],
        logdet_weight: f64,
        grads: &mut [f64],
    ) -> Vec<Tensor> {
        let [g1, g2] = self.gammas;
        let (k2, k2_index) = self.second_scale_coeff();
        let alpha = self.r1.alpha();
        let n1 = self.r1.num_params();
        let n2 = self.r2.num_params();
        let (r1_grads, rest) = grads.split_at_mut(n1);
        let (r2_grads, gamma_grads) = rest.split_at_mut(n2);
        let mut d_gamma = [0.0f64; 2];

        let (gu_new, gv_new) = Self::split(grad_out);
        let scales = gu_new.len();

        // second step: u' = u * e2 + g2 * t2, e2 = exp(k2 * c2)
        let mut gu = Vec::with_capacity(scales);
        let mut g_raw2 = Vec::with_capacity(scales);
        for i in 0..scales {
            let u = &cache.u[i];
            let e2 = &cache.exp2[i];
            let c2 = &cache.out2.scale[i];
            let a2 = &cache.out2.raw_scale[i];
            let t2 = &cache.out2.shift[i];
            let g = &gu_new[i];
            let mut gu_i = Tensor::zeros(u.channels(), u.height(), u.width());
            let mut ga = Tensor::zeros(u.channels(), u.height(), u.width());
            let mut gt = Tensor::zeros(u.channels(), u.height(), u.width());
            for j in 0..u.len() {
                let gj = g.data()[j];
                let ue = u.data()[j] * e2.data()[j];
                gu_i.data_mut()[j] = gj * e2.data()[j];
                d_gamma[k2_index] += gj * ue * c2.data()[j] + logdet_weight * c2.data()[j];
                d_gamma[1] += gj * t2.data()[j];
                let gc = gj * ue * k2 + logdet_weight * k2;
                ga.data_mut()[j] = gc * soft_clamp_grad(a2.data()[j], alpha);
                gt.data_mut()[j] = gj * g2;
            }
            gu.push(gu_i);
            g_raw2.push(Tensor::concat_channels(&ga, &gt));
        }
        let gv_extra = self.r2.backward(&cache.r2, &g_raw2, r2_grads);

        // first step: v' = v * e1 + g1 * t1, e1 = exp(g1 * c1)
        let mut gv = Vec::with_capacity(scales);
        let mut g_raw1 = Vec::with_capacity(scales);
        for i in 0..scales {
            let v = &cache.v[i];
            let e1 = &cache.exp1[i];
            let c1 = &cache.out1.scale[i];
            let a1 = &cache.out1.raw_scale[i];
            let t1 = &cache.out1.shift[i];
            let mut g = gv_new[i].clone();
            g.add_assign(&gv_extra[i]);
            let mut gv_i = Tensor::zeros(v.channels(), v.height(), v.width());
            let mut ga = Tensor::zeros(v.channels(), v.height(), v.width());
            let mut gt = Tensor::zeros(v.channels(), v.height(), v.width());
            for j in 0..v.len() {
                let gj = g.data()[j];
                let ve = v.data()[j] * e1.data()[j];
                gv_i.data_mut()[j] = gj * e1.data()[j];
                d_gamma[0] += gj * (ve * c1.data()[j] + t1.data()[j]) + logdet_weight * c1.data()[j];
                let gc = gj * ve * g1 + logdet_weight * g1;
                ga.data_mut()[j] = gc * soft_clamp_grad(a1.data()[j], alpha);
                gt.data_mut()[j] = gj * g1;
            }
            gv.push(gv_i);
            g_raw1.push(Tensor::concat_channels(&ga, &gt));
        }
        let gu_extra = self.r1.backward(&cache.r1, &g_raw1, r1_grads);
        for (a, b) in gu.iter_mut().zip(&gu_extra) {
            a.add_assign(b);
        }

        gamma_grads[0] += d_gamma[0];
        gamma_grads[1] += d_gamma[1];
        self.concat_unpermute(&gu, &gv)
    }
}

/// `out = x * exp(k * c) + g * t` elementwise, returning `(out, exp(k * c))`.
fn affine(x: &Tensor, clamped: &Tensor, shift: &Tensor, k: f64, g: f64) -> (Tensor, Tensor) {
    let e = clamped.map(|c| (k * c).exp());
    let mut out = x.clone();
    for ((o, ev), t) in out.data_mut().iter_mut().zip(e.data()).zip(shift.data()) {
        *o = *o * ev + g * t;
    }
    (out, e)
}

/// Inverse of [`affine`].
fn affine_inverse(y: &Tensor, clamped: &Tensor, shift: &Tensor, k: f64, g: f64) -> Tensor {
    let mut out = y.clone();
    for ((o, c), t) in out.data_mut().iter_mut().zip(clamped.data()).zip(shift.data()) {
        *o = (*o - g * t) * (-k * c).exp();
    }
    out
}

impl Parameterized for CouplingBlock {
    fn num_params(&self) -> usize {
        self.r1.num_params() + self.r2.num_params() + 2
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        self.r1.visit(f);
        self.r2.visit(f);
        f(ParamKind::Gamma, &self.gammas);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        self.r1.visit_mut(f);
        self.r2.visit_mut(f);
        f(ParamKind::Gamma, &mut self.gammas);
    }
}
