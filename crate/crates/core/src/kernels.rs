//! Raw forward/backward kernels on `[C, H, W]` buffers.
//!
//! Work is split over channels with rayon; every output element is produced by
//! one thread in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

/// `dst[y][x] += scale * src[y + dy][x + dx]` wherever the source index is in range.
#[allow(clippy::too_many_arguments)]
fn shift_accumulate(
    dst: &mut [f64],
    dh: usize,
    dw: usize,
    src: &[f64],
    sh: usize,
    sw: usize,
    dy: isize,
    dx: isize,
    scale: f64,
) {
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((sw as isize - dx).max(0) as usize).min(dw);
    if x_lo >= x_hi {
        return;
    }
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((sh as isize - dy).max(0) as usize).min(dh);
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * dw + x_lo..y * dw + x_hi];
        let s_start = (x_lo as isize + dx) as usize;
        let s = &src[sy * sw + s_start..sy * sw + s_start + (x_hi - x_lo)];
        for (d, s) in d.iter_mut().zip(s) {
            *d += scale * s;
        }
    }
}

/// `sum_{y,x} a[y][x] * b[y + dy][x + dx]` over in-range indices.
#[allow(clippy::too_many_arguments)]
fn shift_dot(a: &[f64], ah: usize, aw: usize, b: &[f64], bh: usize, bw: usize, dy: isize, dx: isize) -> f64 {
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((bw as isize - dx).max(0) as usize).min(aw);
    if x_lo >= x_hi {
        return 0.0;
    }
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((bh as isize - dy).max(0) as usize).min(ah);
    let mut acc = 0.0;
    for y in y_lo..y_hi {
        let by = (y as isize + dy) as usize;
        let ar = &a[y * aw + x_lo..y * aw + x_hi];
        let b_start = (x_lo as isize + dx) as usize;
        let br = &b[by * bw + b_start..by * bw + b_start + (x_hi - x_lo)];
        acc += ar.iter().zip(br).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, isize, isize)> + '_ {
        let (k, p) = (self.k, self.pad as isize);
        (0..k * k).map(move |t| (t, (t / k) as isize - p, (t % k) as isize - p))
    }
}

/// Cross-correlation; weights are `[C_out, C_in, k, k]`.
pub(crate) fn conv2d_forward(g: ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let mut out = vec![0.0; g.c_out * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(co, dst)| {
        dst.fill(bias[co]);
        for ci in 0..g.c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            let wk = &weight[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for (t, dy, dx) in g.offsets() {
                shift_accumulate(dst, ho, wo, src, g.h, g.w, dy, dx, wk[t]);
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub(crate) fn conv2d_backward(
    g: ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = g.h * g.w;
    let oplane = ho * wo;
    let kk = g.k * g.k;

    let mut gin = vec![0.0; g.c_in * plane];
    gin.par_chunks_mut(plane).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.c_out {
            let go = &grad_out[co * oplane..(co + 1) * oplane];
            let wk = &weight[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for (t, dy, dx) in g.offsets() {
                shift_accumulate(dst, g.h, g.w, go, ho, wo, -dy, -dx, wk[t]);
            }
        }
    });

    let mut gw = vec![0.0; g.c_out * g.c_in * kk];
    gw.par_chunks_mut(g.c_in * kk).enumerate().for_each(|(co, dst)| {
        let go = &grad_out[co * oplane..(co + 1) * oplane];
        for ci in 0..g.c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            for (t, dy, dx) in g.offsets() {
                dst[ci * kk + t] = shift_dot(go, ho, wo, src, g.h, g.w, dy, dx);
            }
        }
    });

    let gb = grad_out.chunks_exact(oplane).map(|c| c.iter().sum()).collect();
    (gin, gw, gb)
}

/// Stride-1 transposed convolution with "same" padding; weights are
/// `[C_in, C_out, k, k]`. This is the adjoint of [`conv2d_forward`].
pub(crate) fn conv_transpose2d_forward(
    g: ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let mut out = vec![0.0; g.c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, dst)| {
        dst.fill(bias[co]);
        for ci in 0..g.c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            let wk = &weight[(ci * g.c_out + co) * kk..(ci * g.c_out + co + 1) * kk];
            for (t, dy, dx) in g.offsets() {
                shift_accumulate(dst, g.h, g.w, src, g.h, g.w, -dy, -dx, wk[t]);
            }
        }
    });
    out
}

pub(crate) fn conv_transpose2d_backward(
    g: ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = g.h * g.w;
    let kk = g.k * g.k;

    let mut gin = vec![0.0; g.c_in * plane];
    gin.par_chunks_mut(plane).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.c_out {
            let go = &grad_out[co * plane..(co + 1) * plane];
            let wk = &weight[(ci * g.c_out + co) * kk..(ci * g.c_out + co + 1) * kk];
            for (t, dy, dx) in g.offsets() {
                shift_accumulate(dst, g.h, g.w, go, g.h, g.w, dy, dx, wk[t]);
            }
        }
    });

    let mut gw = vec![0.0; g.c_in * g.c_out * kk];
    gw.par_chunks_mut(g.c_out * kk).enumerate().for_each(|(ci, dst)| {
        let src = &input[ci * plane..(ci + 1) * plane];
        for co in 0..g.c_out {
            let go = &grad_out[co * plane..(co + 1) * plane];
            for (t, dy, dx) in g.offsets() {
                dst[co * kk + t] = shift_dot(src, g.h, g.w, go, g.h, g.w, dy, dx);
            }
        }
    });

    let gb = grad_out.chunks_exact(plane).map(|c| c.iter().sum()).collect();
    (gin, gw, gb)
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, for each,
/// the flat input index of the first (row-major) maximum in its window.
pub(crate) fn maxpool2_forward(c: usize, h: usize, w: usize, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let top = base + 2 * y * w + 2 * x;
                let window = [top, top + 1, top + w, top + w + 1];
                let mut best = window[0];
                for &idx in &window[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// Nearest-neighbour 2x upsampling.
pub(crate) fn upsample2_forward(c: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let w2 = 2 * w;
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            let src = &input[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ch * 4 * h * w + y * w2..ch * 4 * h * w + (y + 1) * w2];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

/// Sums each 2x2 block of the upstream gradient back onto its source pixel.
pub(crate) fn upsample2_backward(c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let w2 = 2 * w;
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            let row = &grad_out[ch * 4 * h * w + y * w2..ch * 4 * h * w + (y + 1) * w2];
            let dst = &mut gin[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            for (x, g) in row.iter().enumerate() {
                dst[x / 2] += g;
            }
        }
    }
    gin
}
