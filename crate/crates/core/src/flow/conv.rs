//! 2-D convolution with zero "same" padding, stride 1 or 2.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamKind, Parameterized};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    /// `[out, in, k, k]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        assert!(stride >= 1);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init_uniform(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        for w in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        conv
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.kernel) / self.stride + 1, (w + 2 * p - self.kernel) / self.stride + 1)
    }

    /// For output row `o` and kernel tap `k`, the input row, if in bounds.
    #[cfg(test)]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad() as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    /// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
    #[inline]
    fn out_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let p = self.pad() as isize;
        let s = self.stride as isize;
        // need 0 <= o*s + k - p < in_len
        let lo_num = p - k as isize;
        let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
        let hi_num = in_len as isize - 1 + p - k as isize;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        (lo as usize, (hi as usize).min(out_len).max(lo as usize))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_dims(h, w);
        let k = self.kernel;
        let s = self.stride;
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for oc in 0..self.out_channels {
            let plane = out.plane_mut(oc);
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = x.plane(ic);
                for ky in 0..k {
                    let (y0, y1) = self.out_range(ky, h, oh);
                    for kx in 0..k {
                        let wv = self.weight[((oc * self.in_channels + ic) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = self.out_range(kx, w, ow);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - self.pad();
                            let row = &src[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in x0..x1 {
                                orow[ox] += wv * row[ox * s + kx - self.pad()];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (`[weight | bias]`) and
    /// returns the gradient with respect to `x`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut [f64]) -> Tensor {
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_dims(h, w);
        assert_eq!(grad_out.shape(), (self.out_channels, oh, ow));
        assert_eq!(grads.len(), self.num_params());
        let (gw, gb) = grads.split_at_mut(self.weight.len());
        let k = self.kernel;
        let s = self.stride;
        let mut gx = Tensor::zeros(self.in_channels, h, w);
        for oc in 0..self.out_channels {
            let g = grad_out.plane(oc);
            gb[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let src = x.plane(ic);
                for ky in 0..k {
                    let (y0, y1) = self.out_range(ky, h, oh);
                    for kx in 0..k {
                        let wi = ((oc * self.in_channels + ic) * k + ky) * k + kx;
                        let wv = self.weight[wi];
                        let (x0, x1) = self.out_range(kx, w, ow);
                        let mut acc = 0.0;
                        let gplane = gx.plane_mut(ic);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - self.pad();
                            for ox in x0..x1 {
                                let ix = ox * s + kx - self.pad();
                                let gv = g[oy * ow + ox];
                                acc += gv * src[iy * w + ix];
                                gplane[iy * w + ix] += wv * gv;
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        gx
    }

    /// Direct-definition reference used in tests.
    #[cfg(test)]
    fn forward_naive(&self, x: &Tensor) -> Tensor {
        let (oh, ow) = self.output_dims(x.height(), x.width());
        let k = self.kernel;
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for oc in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[oc];
                    for ic in 0..self.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                if let (Some(iy), Some(ix)) =
                                    (self.src(oy, ky, x.height()), self.src(ox, kx, x.width()))
                                {
                                    acc += self.weight[((oc * self.in_channels + ic) * k + ky) * k + kx]
                                        * x.get(ic, iy, ix);
                                }
                            }
                        }
                    }
                    out.set(oc, oy, ox, acc);
                }
            }
        }
        out
    }
}

impl Parameterized for Conv2d {
    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        f(ParamKind::ConvWeight, &self.weight);
        f(ParamKind::ConvBias, &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        f(ParamKind::ConvWeight, &mut self.weight);
        f(ParamKind::ConvBias, &mut self.bias);
    }
}
