//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use csflow::feature_pyramid::Label;
use csflow::flow::{FlowConfig, FlowModel};
use csflow::training::compute_gradients;
use csflow::{FeaturePyramid, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pyramid dims with the given finest size, halving per scale.
pub fn dims(num_scales: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    (0..num_scales).map(|i| (h >> i, w >> i)).collect()
}

pub fn random_stack(rng: &mut ChaCha8Rng, c: usize, dims: &[(usize, usize)], scale: f64) -> Vec<Tensor> {
    dims.iter()
        .map(|&(h, w)| Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-scale..scale)).collect()))
        .collect()
}

/// Random model with non-zero block coefficients in `[-g, g]`.
pub fn random_model(rng: &mut ChaCha8Rng, cfg: FlowConfig, g: f64) -> FlowModel {
    let mut m = FlowModel::build(cfg).unwrap();
    for b in m.blocks_mut() {
        b.set_gammas([rng.random_range(-g..g), rng.random_range(-g..g)]);
    }
    m
}

fn flatten(stack: &[Tensor]) -> Vec<f64> {
    stack.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(like: &[Tensor], flat: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    like.iter()
        .map(|t| {
            let n = t.len();
            let out = Tensor::from_vec(t.channels(), t.height(), t.width(), flat[off..off + n].to_vec());
            off += n;
            out
        })
        .collect()
}

/// `log |det dz/dy|` from a dense central-difference Jacobian (step `h`)
/// and an LU factorization.
pub fn fd_logdet(model: &FlowModel, y: &[Tensor], h: f64) -> f64 {
    let base = flatten(y);
    let d = base.len();
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let zp = flatten(&model.forward_tensors(&unflatten(y, &plus)).unwrap().latent);
        let zm = flatten(&model.forward_tensors(&unflatten(y, &minus)).unwrap().latent);
        for i in 0..d {
            jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    let lu = jac.lu();
    lu.u().diagonal().iter().map(|v| v.abs().ln()).sum()
}

/// AUROC as the fraction of (anomalous, normal) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auroc(scores: &[(f64, Label)]) -> f64 {
    let mut twice_concordant: u64 = 0;
    let (mut pos, mut neg) = (0u64, 0u64);
    for &(sa, la) in scores {
        if la.is_anomalous() {
            pos += 1;
        } else {
            neg += 1;
        }
        if !la.is_anomalous() {
            continue;
        }
        for &(sn, ln) in scores {
            if ln.is_anomalous() {
                continue;
            }
            if sa > sn {
                twice_concordant += 2;
            } else if sa == sn {
                twice_concordant += 1;
            }
        }
    }
    (twice_concordant as f64 / 2.0) / (pos as f64 * neg as f64)
}

/// Random labeled scores with at least one of each class; `levels` small
/// values produce heavy ties.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, levels: Option<u32>) -> Vec<(f64, Label)> {
    let mut out: Vec<(f64, Label)> = (0..n)
        .map(|_| {
            let s = match levels {
                Some(k) => f64::from(rng.random_range(0..k)),
                None => rng.random_range(-10.0..10.0),
            };
            let l = if rng.random_bool(0.4) { Label::Anomalous } else { Label::Normal };
            (s, l)
        })
        .collect();
    out[0].1 = Label::Normal;
    out[n - 1].1 = Label::Anomalous;
    out
}

pub struct GradientCheck {
    pub num_params: usize,
    pub worst_relative: f64,
    pub worst_absolute_small: f64,
    pub failures: Vec<String>,
}

/// Compares analytic gradients of the batch loss against central
/// differences with step `h` over every parameter. Relative error is
/// bounded by `rel_tol`; where both magnitudes are below `small`, the
/// absolute error is bounded by `abs_tol` instead.
pub fn check_gradients(
    model: &mut FlowModel,
    batch: &[FeaturePyramid],
    h: f64,
    rel_tol: f64,
    small: f64,
    abs_tol: f64,
) -> GradientCheck {
    let analytic = compute_gradients(model, batch).unwrap().grads;
    let base = model.parameters();
    let mut check =
        GradientCheck { num_params: base.len(), worst_relative: 0.0, worst_absolute_small: 0.0, failures: Vec::new() };
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_parameters(&p).unwrap();
        let up = compute_gradients(model, batch).unwrap().loss;
        p[i] = base[i] - h;
        model.set_parameters(&p).unwrap();
        let down = compute_gradients(model, batch).unwrap().loss;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let mag = a.abs().max(fd.abs());
        if mag < small {
            check.worst_absolute_small = check.worst_absolute_small.max((a - fd).abs());
            if (a - fd).abs() >= abs_tol {
                check.failures.push(format!("param {i}: analytic {a:e}, fd {fd:e}"));
            }
        } else {
            let rel = (a - fd).abs() / mag;
            check.worst_relative = check.worst_relative.max(rel);
            if rel >= rel_tol {
                check.failures.push(format!("param {i}: analytic {a:e}, fd {fd:e}, rel {rel:e}"));
            }
        }
    }
    model.set_parameters(&base).unwrap();
    check
}

pub fn pyramid(stack: &[Tensor]) -> FeaturePyramid {
    FeaturePyramid::from_tensors("sample", stack).unwrap()
}
