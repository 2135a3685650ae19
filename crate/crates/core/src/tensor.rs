//! Dense channel-major 3-D tensors used for all flow computation.
//!
//! Feature files carry 32-bit floats; everything inside the flow runs in
//! `f64` so that analytic gradients and log-determinants can be checked
//! against finite differences at tight tolerances.

use serde::{Deserialize, Serialize};

/// `(channels, height, width)`.
pub type Shape3 = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    /// Panics if `data.len() != channels * height * width`.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length does not match shape");
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape3 {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Splits into channels `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        assert!(at <= self.channels);
        let n = at * self.plane_len();
        (
            Tensor::from_vec(at, self.height, self.width, self.data[..n].to_vec()),
            Tensor::from_vec(self.channels - at, self.height, self.width, self.data[n..].to_vec()),
        )
    }

    pub fn concat_channels(first: &Tensor, second: &Tensor) -> Tensor {
        assert_eq!((first.height, first.width), (second.height, second.width), "spatial dims differ in channel concat");
        let mut data = Vec::with_capacity(first.len() + second.len());
        data.extend_from_slice(&first.data);
        data.extend_from_slice(&second.data);
        Tensor::from_vec(first.channels + second.channels, first.height, first.width, data)
    }

    /// Output channel `c` is input channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Tensor {
        assert_eq!(perm.len(), self.channels);
        let mut out = Tensor::zeros(self.channels, self.height, self.width);
        for (dst, &src) in perm.iter().enumerate() {
            out.plane_mut(dst).copy_from_slice(self.plane(src));
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.channels, self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel-wise sum of squares at every spatial position.
    pub fn channel_energy(&self) -> Vec<f64> {
        let n = self.plane_len();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v * v;
            }
        }
        out
    }
}

/// Total element count of a stack of tensors.
pub fn total_len(stack: &[Tensor]) -> usize {
    stack.iter().map(Tensor::len).sum()
}

pub fn stack_sum_squares(stack: &[Tensor]) -> f64 {
    stack.iter().map(Tensor::sum_squares).sum()
}

pub fn stack_max_abs(stack: &[Tensor]) -> f64 {
    stack.iter().fold(0.0, |m, t| m.max(t.max_abs()))
}

pub fn stack_max_abs_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(x.max_abs_diff(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_concat_roundtrip() {
        let t = Tensor::from_vec(4, 1, 2, (0..8).map(f64::from).collect());
        let (a, b) = t.split_channels(2);
        assert_eq!(a.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(Tensor::concat_channels(&a, &b), t);
    }

    #[test]
    fn permute_moves_planes() {
        let t = Tensor::from_vec(3, 1, 1, vec![10.0, 20.0, 30.0]);
        let p = t.permute_channels(&[2, 0, 1]);
        assert_eq!(p.data(), &[30.0, 10.0, 20.0]);
    }

    #[test]
    fn channel_energy_sums_over_channels() {
        let t = Tensor::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.channel_energy(), vec![10.0, 20.0]);
    }
}
