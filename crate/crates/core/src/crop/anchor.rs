//! Gaussian-like anchor window `centroid ± gamma * std` and its gradient with
//! respect to every saliency pixel.

use super::moments::{compute_moments, Moments};
use crate::geometry::{Rect, SaliencyMap};

/// Below this spread the `1 / (2 sigma)` factor is treated as saturated and the
/// spread term contributes no gradient.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Moments index pixels by their integer coordinates while rectangles use pixel
/// edges, so pixel `i` spans `[i, i + 1]` and its center sits at `i + 0.5`.
pub const PIXEL_CENTER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorParams {
    pub gamma: f64,
    /// Fraction of the image area covered by the centered fallback window.
    pub fallback_fraction: f64,
    /// The fallback fires when `m00 < activation_threshold * H * W`.
    pub activation_threshold: f64,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            fallback_fraction: 0.70,
            activation_threshold: 1e-3,
        }
    }
}

impl AnchorParams {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorSource {
    Moments(Moments),
    /// Not enough saliency mass; the centered window was used instead.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    /// Corners clamped to the image frame.
    pub rect: Rect,
    /// Corners before clamping.
    pub unclamped: Rect,
    pub source: AnchorSource,
}

impl Anchor {
    pub fn is_fallback(&self) -> bool {
        matches!(self.source, AnchorSource::Fallback)
    }
}

/// Which analytical gradient [`anchor_backward`] evaluates.
///
/// `FlippedCentroidTerm` negates the centroid derivative and exists only so the
/// gradient checker can demonstrate that it catches a broken formula.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorGradient {
    #[default]
    Exact,
    FlippedCentroidTerm,
}

pub fn anchor_region(map: &SaliencyMap, params: &AnchorParams) -> Anchor {
    let bounds = map.bounds();
    let moments = compute_moments(map);
    let pixels = (map.width() * map.height()) as f64;
    if moments.m00 < params.activation_threshold * pixels || !moments.has_mass() {
        let rect = fallback_rect(map.width() as f64, map.height() as f64, params.fallback_fraction);
        return Anchor {
            rect,
            unclamped: rect,
            source: AnchorSource::Fallback,
        };
    }
    let g = params.gamma;
    let (cx, cy) = (moments.cx + PIXEL_CENTER, moments.cy + PIXEL_CENTER);
    let unclamped = Rect::new(
        cx - g * moments.sigma_x,
        cy - g * moments.sigma_y,
        cx + g * moments.sigma_x,
        cy + g * moments.sigma_y,
    );
    Anchor {
        rect: unclamped.clamp_to(&bounds),
        unclamped,
        source: AnchorSource::Moments(moments),
    }
}

/// Centered window whose area is `fraction` of the image.
pub(crate) fn fallback_rect(width: f64, height: f64, fraction: f64) -> Rect {
    let side = fraction.clamp(0.0, 1.0).sqrt();
    let (w, h) = (width * side, height * side);
    let (x0, y0) = (0.5 * (width - w), 0.5 * (height - h));
    Rect::new(x0, y0, x0 + w, y0 + h)
}

/// Pulls an upstream gradient on the anchor corners `[x_min, y_min, x_max, y_max]`
/// back onto the saliency map.
///
/// Fallback anchors are constant and clamped corners are flat, so both receive
/// zero gradient.
pub fn anchor_backward(
    map: &SaliencyMap,
    anchor: &Anchor,
    gamma: f64,
    upstream: [f64; 4],
    variant: AnchorGradient,
) -> Vec<f64> {
    let mut grad = vec![0.0; map.values().len()];
    let AnchorSource::Moments(m) = anchor.source else {
        return grad;
    };
    let bounds = map.bounds();
    let live = |v: f64, lo: f64, hi: f64| if v < lo || v > hi { 0.0 } else { 1.0 };
    let u = anchor.unclamped;
    let [ux_min, uy_min, ux_max, uy_max] = upstream;
    let gx_min = ux_min * live(u.x_min, bounds.x_min, bounds.x_max);
    let gx_max = ux_max * live(u.x_max, bounds.x_min, bounds.x_max);
    let gy_min = uy_min * live(u.y_min, bounds.y_min, bounds.y_max);
    let gy_max = uy_max * live(u.y_max, bounds.y_min, bounds.y_max);

    // d corner = d c ± gamma d sigma
    let (cx_coef, sx_coef) = (gx_min + gx_max, gamma * (gx_max - gx_min));
    let (cy_coef, sy_coef) = (gy_min + gy_max, gamma * (gy_max - gy_min));

    let sign = match variant {
        AnchorGradient::Exact => 1.0,
        AnchorGradient::FlippedCentroidTerm => -1.0,
    };
    let inv_m00 = 1.0 / m.m00;
    let inv_m00_sq = inv_m00 * inv_m00;
    let half_inv_sx = if m.sigma_x > SIGMA_FLOOR { 0.5 / m.sigma_x } else { 0.0 };
    let half_inv_sy = if m.sigma_y > SIGMA_FLOOR { 0.5 / m.sigma_y } else { 0.0 };

    let w = map.width();
    let dcx: Vec<f64> = (0..w)
        .map(|i| sign * (i as f64 * inv_m00 - m.m10 * inv_m00_sq))
        .collect();
    let dsx: Vec<f64> = (0..w)
        .map(|i| {
            let x = i as f64;
            half_inv_sx * (x * x * inv_m00 - m.m20 * inv_m00_sq - 2.0 * m.cx * dcx[i] * sign)
        })
        .collect();
    for (j, row) in grad.chunks_exact_mut(w).enumerate() {
        let y = j as f64;
        let dcy = sign * (y * inv_m00 - m.m01 * inv_m00_sq);
        let dsy = half_inv_sy * (y * y * inv_m00 - m.m02 * inv_m00_sq - 2.0 * m.cy * dcy * sign);
        let row_term = cy_coef * dcy + sy_coef * dsy;
        for (i, g) in row.iter_mut().enumerate() {
            *g = cx_coef * dcx[i] + sx_coef * dsx[i] + row_term;
        }
    }
    grad
}
