use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::tensor::Tensor;

/// Output of [`roi_pool`]: pooled `[C, grid, grid]` features and, per output
/// element, the flat input index that won the max.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Integer span `[lo, hi)` covering the real interval `[start, end]` after
/// rounding outwards; never empty.
fn cell_span(start: f64, end: f64, len: usize) -> (usize, usize) {
    let lo = (start.floor().max(0.0) as usize).min(len - 1);
    let hi = (end.ceil().max(0.0) as usize).min(len);
    (lo, hi.max(lo + 1))
}

/// Max-pools the part of `features` (`[C, h, w]`) under `region` into a fixed
/// `grid x grid` layout.
///
/// `region` is in input-image pixels and is divided by `stride` to land on the
/// feature grid.
pub fn roi_pool(features: &Tensor, region: &Rect, stride: f64, grid: usize) -> Result<RoiPooled> {
    let (c, h, w) = features.chw()?;
    if grid == 0 || stride <= 0.0 {
        return Err(Error::Parameter(format!(
            "roi pooling needs grid >= 1 and positive stride, got grid={grid} stride={stride}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("roi pooling over an empty feature map"));
    }
    if !region.is_finite() {
        return Err(Error::Numeric(format!("non-finite roi {region:?}")));
    }
    let fx0 = (region.x_min / stride).clamp(0.0, w as f64);
    let fx1 = (region.x_max / stride).clamp(0.0, w as f64).max(fx0);
    let fy0 = (region.y_min / stride).clamp(0.0, h as f64);
    let fy1 = (region.y_max / stride).clamp(0.0, h as f64).max(fy0);
    let g = grid as f64;
    let xs: Vec<(usize, usize)> = (0..grid)
        .map(|k| {
            let step = (fx1 - fx0) / g;
            cell_span(fx0 + k as f64 * step, fx0 + (k + 1) as f64 * step, w)
        })
        .collect();
    let ys: Vec<(usize, usize)> = (0..grid)
        .map(|k| {
            let step = (fy1 - fy0) / g;
            cell_span(fy0 + k as f64 * step, fy0 + (k + 1) as f64 * step, h)
        })
        .collect();

    let data = features.data();
    let mut out = Vec::with_capacity(c * grid * grid);
    let mut argmax = Vec::with_capacity(c * grid * grid);
    for ch in 0..c {
        let base = ch * h * w;
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                let mut best_idx = base + y0 * w + x0;
                let mut best = data[best_idx];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = base + y * w + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(RoiPooled {
        output: Tensor::new([c, grid, grid], out)?,
        argmax,
    })
}

/// Routes each pooled gradient to the input position that produced the max.
pub fn roi_pool_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad[idx] += g;
    }
    grad
}
