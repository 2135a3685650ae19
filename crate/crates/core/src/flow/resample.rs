//! Bilinear resizing with the half-pixel (align-corners-off) convention:
//! output pixel `i` samples input coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped at the lower border.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

/// Resizes a single `h x w` plane.
pub fn resize_plane(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = vec![0.0; out_h * out_w];
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let top = plane[a.lo * w + b.lo] * (1.0 - b.frac) + plane[a.lo * w + b.hi] * b.frac;
            let bot = plane[a.hi * w + b.lo] * (1.0 - b.frac) + plane[a.hi * w + b.hi] * b.frac;
            out[oy * out_w + ox] = top * (1.0 - a.frac) + bot * a.frac;
        }
    }
    out
}

pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let mut out = Tensor::zeros(x.channels(), out_h, out_w);
    for c in 0..x.channels() {
        let r = resize_plane(x.plane(c), x.height(), x.width(), out_h, out_w);
        out.plane_mut(c).copy_from_slice(&r);
    }
    out
}

/// Adjoint of [`resize_bilinear`]: maps an output gradient back to the input grid.
pub fn resize_bilinear_backward(grad: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (out_h, out_w) = (grad.height(), grad.width());
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let mut gx = Tensor::zeros(grad.channels(), in_h, in_w);
    for c in 0..grad.channels() {
        let g = grad.plane(c);
        let dst = gx.plane_mut(c);
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * out_w + ox];
                dst[a.lo * in_w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                dst[a.lo * in_w + b.hi] += v * (1.0 - a.frac) * b.frac;
                dst[a.hi * in_w + b.lo] += v * a.frac * (1.0 - b.frac);
                dst[a.hi * in_w + b.hi] += v * a.frac * b.frac;
            }
        }
    }
    gx
}

pub fn upsample2(x: &Tensor) -> Tensor {
    resize_bilinear(x, 2 * x.height(), 2 * x.width())
}
