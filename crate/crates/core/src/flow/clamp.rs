use std::f64::consts::PI;

use crate::tensor::Tensor;

/// Bounded activation `(2 alpha / pi) * atan(h / alpha)`, mapping onto `(-alpha, alpha)`.
#[inline]
pub fn soft_clamp(h: f64, alpha: f64) -> f64 {
    (2.0 * alpha / PI) * (h / alpha).atan()
}

/// Derivative of [`soft_clamp`] with respect to `h`.
#[inline]
pub fn soft_clamp_grad(h: f64, alpha: f64) -> f64 {
    let r = h / alpha;
    (2.0 / PI) / (1.0 + r * r)
}

pub fn soft_clamp_tensor(t: &Tensor, alpha: f64) -> Tensor {
    t.map(|h| soft_clamp(h, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(soft_clamp(0.0, 3.0), 0.0);
        assert!((soft_clamp(3.0, 3.0) - 1.5).abs() <= 2.0 * f64::EPSILON);
        let big = soft_clamp(1e6, 3.0);
        assert!(big < 3.0 && big > 2.99);
    }

    #[test]
    fn odd_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in -200..=200 {
            let h = i as f64 * 0.37;
            assert_eq!(soft_clamp(-h, 2.0), -soft_clamp(h, 2.0));
            let v = soft_clamp(h, 2.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        for h in [-7.0, -0.3, 0.0, 1.2, 40.0] {
            let eps = 1e-6;
            let fd = (soft_clamp(h + eps, 3.0) - soft_clamp(h - eps, 3.0)) / (2.0 * eps);
            assert!((fd - soft_clamp_grad(h, 3.0)).abs() < 1e-8);
        }
    }
}
