//! Offset coefficients relating an anchor window to a crop rectangle.
//!
//! With anchor `s` and crop `a`, the edge offsets are
//! `dy_t = s.y_min - a.y_min`, `dy_b = a.y_max - s.y_max` (likewise in x), and the
//! coefficients express them as fractions of the crop's own size:
//! `alpha = dy / h_a`, `beta = dx / w_a`. Hence `h_a = h_s + (alpha_t + alpha_b) h_a`.

use crate::crop::{anchor_region, AnchorParams};
use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};

/// Smallest `1 - alpha_t - alpha_b` (or beta) accepted when decoding.
pub const MIN_DENOMINATOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffsetCoefficients {
    pub alpha_t: f64,
    pub alpha_b: f64,
    pub beta_t: f64,
    pub beta_b: f64,
}

impl OffsetCoefficients {
    pub const ZERO: OffsetCoefficients = OffsetCoefficients {
        alpha_t: 0.0,
        alpha_b: 0.0,
        beta_t: 0.0,
        beta_b: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha_t, self.alpha_b, self.beta_t, self.beta_b]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            alpha_t: a[0],
            alpha_b: a[1],
            beta_t: a[2],
            beta_b: a[3],
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        let a: [f64; 4] = s
            .try_into()
            .map_err(|_| Error::shape(format!("expected 4 offset coefficients, got {}", s.len())))?;
        Ok(Self::from_array(a))
    }

    /// Both denominators of the decoder are positive.
    pub fn is_decodable(&self) -> bool {
        self.alpha_t + self.alpha_b < 1.0 && self.beta_t + self.beta_b < 1.0
    }
}

pub fn encode_offsets(anchor: &Rect, aesthetic: &Rect) -> Result<OffsetCoefficients> {
    let (h, w) = (aesthetic.height(), aesthetic.width());
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::Geometry(format!(
            "crop rectangle {aesthetic:?} has no area"
        )));
    }
    Ok(OffsetCoefficients {
        alpha_t: (anchor.y_min - aesthetic.y_min) / h,
        alpha_b: (aesthetic.y_max - anchor.y_max) / h,
        beta_t: (anchor.x_min - aesthetic.x_min) / w,
        beta_b: (aesthetic.x_max - anchor.x_max) / w,
    })
}

/// Inverse of [`encode_offsets`] without clamping to image bounds.
pub fn decode_unclamped(anchor: &Rect, c: &OffsetCoefficients) -> Result<Rect> {
    let (hs, ws) = (anchor.height(), anchor.width());
    if !(hs > 0.0 && ws > 0.0) {
        return Err(Error::Geometry(format!("anchor {anchor:?} has no area")));
    }
    let h = hs / (1.0 - c.alpha_t - c.alpha_b).max(MIN_DENOMINATOR);
    let w = ws / (1.0 - c.beta_t - c.beta_b).max(MIN_DENOMINATOR);
    let r = Rect::new(
        anchor.x_min - c.beta_t * w,
        anchor.y_min - c.alpha_t * h,
        anchor.x_max + c.beta_b * w,
        anchor.y_max + c.alpha_b * h,
    );
    if !r.is_finite() {
        return Err(Error::Numeric(format!("decoded rectangle {r:?} is not finite")));
    }
    Ok(r)
}

/// Crop rectangle implied by `coeffs` around `anchor`, clamped to `image_bounds`.
pub fn decode_rect(anchor: &Rect, coeffs: &OffsetCoefficients, image_bounds: &Rect) -> Result<Rect> {
    Ok(decode_unclamped(anchor, coeffs)?.clamp_to(image_bounds))
}

/// Regression target for a high-quality training image: the crop is the
/// whole `image_w x image_h` frame.
pub fn ground_truth_offsets(
    map: &SaliencyMap,
    image_w: usize,
    image_h: usize,
    gamma: f64,
) -> Result<OffsetCoefficients> {
    let anchor = anchor_region(map, &AnchorParams::with_gamma(gamma));
    encode_offsets(&anchor.rect, &Rect::full(image_w as f64, image_h as f64))
}
