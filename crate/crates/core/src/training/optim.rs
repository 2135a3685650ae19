use crate::flow::ParamKind;

/// Global l2 norm of a gradient vector.
pub fn grad_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to [`ParamKind::ConvWeight`] entries only.
    pub weight_decay: f64,
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self { config, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update to `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], kinds: &[ParamKind]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(kinds.len(), self.m.len());
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps, weight_decay: wd } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            if kinds[i] == ParamKind::ConvWeight {
                params[i] -= lr * wd * params[i];
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
