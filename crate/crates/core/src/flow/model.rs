use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FlowConfig;
use super::coupling::{BlockCache, CouplingBlock};
use super::params::{ParamKind, Parameterized};
use crate::error::{CsFlowError, Result};
use crate::feature_pyramid::{FeaturePyramid, ShapeSignature};
use crate::tensor::{total_len, Tensor};

/// Output of the forward bijection for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentResult {
    /// Same shape as the input at every scale.
    pub latent: Vec<Tensor>,
    /// `log |det dz/dy|`.
    pub logdet: f64,
}

impl LatentResult {
    pub fn total_len(&self) -> usize {
        total_len(&self.latent)
    }
}

/// A cross-scale normalizing flow: a chain of coupling blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    blocks: Vec<CouplingBlock>,
}

pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
}

impl FlowModel {
    /// Draws permutations and subnet weights from `config.seed`; all block
    /// coefficients start at zero.
    pub fn build(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hidden = config.hidden_channels();
        let blocks = config
            .kernel_sizes
            .iter()
            .map(|&k| {
                CouplingBlock::init(
                    config.num_scales,
                    config.channels,
                    hidden,
                    k,
                    config.leaky_slope,
                    config.clamp_alpha,
                    config.shared_first_gamma,
                    &mut rng,
                )
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    /// Validates the spatial layout of an input or latent stack against the
    /// model's scale count and channel width.
    pub fn check_input(&self, x: &[Tensor]) -> Result<()> {
        if x.len() != self.config.num_scales {
            return Err(CsFlowError::ShapeMismatch(format!(
                "model has {} scales, input has {}",
                self.config.num_scales,
                x.len()
            )));
        }
        for (i, t) in x.iter().enumerate() {
            if t.channels() != self.config.channels {
                return Err(CsFlowError::ShapeMismatch(format!(
                    "scale {i} has {} channels, model expects {}",
                    t.channels(),
                    self.config.channels
                )));
            }
            if i > 0 && (x[i - 1].height() != 2 * t.height() || x[i - 1].width() != 2 * t.width()) {
                return Err(CsFlowError::ShapeMismatch(format!(
                    "scale {i} ({}x{}) does not halve scale {} ({}x{})",
                    t.height(),
                    t.width(),
                    i - 1,
                    x[i - 1].height(),
                    x[i - 1].width()
                )));
            }
        }
        Ok(())
    }

    pub fn check_signature(&self, sig: &ShapeSignature) -> Result<()> {
        self.config.check_signature(sig)
    }

    pub fn forward(&self, y: &FeaturePyramid) -> Result<LatentResult> {
        self.forward_tensors(&y.to_tensors())
    }

    pub fn forward_tensors(&self, y: &[Tensor]) -> Result<LatentResult> {
        self.check_input(y)?;
        let mut x = y.to_vec();
        let mut logdet = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            let (out, ld) = block.forward(&x);
            check_finite(&out, ld, b)?;
            x = out;
            logdet += ld;
        }
        Ok(LatentResult { latent: x, logdet })
    }

    pub(crate) fn forward_cached(&self, y: &[Tensor]) -> Result<(LatentResult, ForwardCache)> {
        self.check_input(y)?;
        let mut x = y.to_vec();
        let mut logdet = 0.0;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let (out, ld, cache) = block.forward_cached(&x);
            check_finite(&out, ld, b)?;
            caches.push(cache);
            x = out;
            logdet += ld;
        }
        Ok((LatentResult { latent: x, logdet }, ForwardCache { blocks: caches }))
    }

    /// Reverse-mode pass. `grad_latent` is dL/dz, `logdet_weight` is
    /// dL/dlogdet; parameter gradients are added into `grads` in flat
    /// parameter order. Returns dL/dy.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        grad_latent: &[Tensor],
        logdet_weight: f64,
        grads: &mut [f64],
    ) -> Vec<Tensor> {
        assert_eq!(grads.len(), self.num_params());
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            offsets.push(off);
            off += b.num_params();
        }
        let mut g = grad_latent.to_vec();
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let slice = &mut grads[offsets[b]..offsets[b] + block.num_params()];
            g = block.backward(&cache.blocks[b], &g, logdet_weight, slice);
        }
        g
    }

    /// Exact inverse of [`FlowModel::forward_tensors`].
    pub fn inverse(&self, z: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_input(z)?;
        let mut x = z.to_vec();
        for block in self.blocks.iter().rev() {
            x = block.inverse(&x);
        }
        Ok(x)
    }

    pub fn num_parameters(&self) -> usize {
        self.num_params()
    }

    /// Per-scalar parameter roles, in flat order.
    pub fn parameter_kinds(&self) -> Vec<ParamKind> {
        self.param_kinds()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.flat_params()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(CsFlowError::ShapeMismatch(format!(
                "{} parameter values for a model with {}",
                values.len(),
                self.num_params()
            )));
        }
        self.load_flat_params(values);
        Ok(())
    }
}

fn check_finite(out: &[Tensor], logdet: f64, block: usize) -> Result<()> {
    if logdet.is_finite() && out.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(CsFlowError::NonFinite { block, epoch: None })
    }
}

impl Parameterized for FlowModel {
    fn num_params(&self) -> usize {
        self.blocks.iter().map(Parameterized::num_params).sum()
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        for b in &self.blocks {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{stack_max_abs_diff, stack_sum_squares};
    use rand::Rng;

    fn random_input(rng: &mut ChaCha8Rng, c: usize, dims: &[(usize, usize)]) -> Vec<Tensor> {
        dims.iter()
            .map(|&(h, w)| Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect()
    }

    fn randomize_gammas(model: &mut FlowModel, rng: &mut ChaCha8Rng) {
        for b in model.blocks_mut() {
            b.set_gammas([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }
    }

    #[test]
    fn build_reference_architecture() {
        let m = FlowModel::build(FlowConfig::new(3, 304)).unwrap();
        assert_eq!(m.blocks().len(), 4);
        for b in m.blocks() {
            assert_eq!(b.permutations().len(), 3);
            assert!(b.permutations().iter().all(|p| p.len() == 304));
            assert_eq!(b.gammas(), [0.0, 0.0]);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = FlowModel::build(FlowConfig::new(2, 4).with_seed(9)).unwrap();
        let b = FlowModel::build(FlowConfig::new(2, 4).with_seed(9)).unwrap();
        assert_eq!(a, b);
        let c = FlowModel::build(FlowConfig::new(2, 4).with_seed(10)).unwrap();
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(FlowModel::build(FlowConfig::new(1, 5)).is_err());
    }

    #[test]
    fn fresh_model_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = FlowModel::build(FlowConfig::new(2, 4).with_seed(3)).unwrap();
        let y = random_input(&mut rng, 4, &[(4, 4), (2, 2)]);
        let out = m.forward_tensors(&y).unwrap();
        assert_eq!(out.logdet, 0.0);
        assert!((stack_sum_squares(&out.latent) - stack_sum_squares(&y)).abs() < 1e-12);
        // composition of the per-block permutations
        let mut expected = y.clone();
        for b in m.blocks() {
            expected = expected.iter().zip(b.permutations()).map(|(t, p)| t.permute_channels(p)).collect();
        }
        assert_eq!(out.latent, expected);
        assert_eq!(m.inverse(&out.latent).unwrap(), y);
    }

    #[test]
    fn shift_only_block() {
        let mut m = FlowModel::build(FlowConfig::new(1, 2).with_blocks(1)).unwrap();
        let block = &mut m.blocks_mut()[0];
        for second in [false, true] {
            let net = if second { block.r2_mut() } else { block.r1_mut() };
            net.visit_mut(&mut |_, p| p.fill(0.0));
            // output channel 1 of the level-2 conv is the shift
            net.convs_mut().nth(1).unwrap().bias_mut()[1] = 1.0;
        }
        block.set_gammas([1.0, 1.0]);
        let perm = block.permutations()[0].clone();
        let y = vec![Tensor::from_vec(2, 1, 1, vec![0.5, -0.25])];
        let out = m.forward_tensors(&y).unwrap();
        let permuted = y[0].permute_channels(&perm);
        assert_eq!(out.logdet, 0.0);
        assert_eq!(out.latent[0].data(), &[permuted.data()[0] + 1.0, permuted.data()[1] + 1.0]);
        assert!(stack_max_abs_diff(&m.inverse(&out.latent).unwrap(), &y) < 1e-15);
    }

    #[test]
    fn inverse_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (s, c) in [(1, 2), (2, 4), (3, 8)] {
            let mut m = FlowModel::build(FlowConfig::new(s, c).with_blocks(2).with_seed(s as u64)).unwrap();
            randomize_gammas(&mut m, &mut rng);
            let dims: Vec<_> = (0..s).map(|i| (8 >> i, 4 >> i)).collect();
            let y = random_input(&mut rng, c, &dims);
            let z = m.forward_tensors(&y).unwrap().latent;
            let back = m.inverse(&z).unwrap();
            assert!(stack_max_abs_diff(&back, &y) < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let m = FlowModel::build(FlowConfig::new(2, 4)).unwrap();
        let y = vec![Tensor::zeros(4, 4, 4)];
        assert!(matches!(m.forward_tensors(&y), Err(CsFlowError::ShapeMismatch(_))));
        let y = vec![Tensor::zeros(4, 4, 4), Tensor::zeros(2, 2, 2)];
        assert!(m.forward_tensors(&y).is_err());
        let y = vec![Tensor::zeros(4, 4, 4), Tensor::zeros(4, 3, 2)];
        assert!(m.inverse(&y).is_err());
    }

    #[test]
    fn non_finite_reports_block() {
        let mut m = FlowModel::build(FlowConfig::new(1, 2).with_blocks(2)).unwrap();
        m.blocks_mut()[1].set_gammas([f64::INFINITY, 0.0]);
        let y = vec![Tensor::from_vec(2, 2, 2, vec![1.0; 8])];
        match m.forward_tensors(&y) {
            Err(CsFlowError::NonFinite { block, .. }) => assert_eq!(block, 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn parameter_roundtrip() {
        let mut m = FlowModel::build(FlowConfig::new(2, 4).with_blocks(2)).unwrap();
        let mut p = m.parameters();
        assert_eq!(p.len(), m.num_parameters());
        p.iter_mut().for_each(|v| *v += 1.0);
        m.set_parameters(&p).unwrap();
        assert_eq!(m.parameters(), p);
        assert!(m.set_parameters(&p[1..]).is_err());
        let kinds = m.parameter_kinds();
        assert_eq!(kinds.iter().filter(|k| **k == ParamKind::Gamma).count(), 4);
    }
}
