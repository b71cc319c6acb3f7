//! Rectangles and saliency maps in pixel coordinates.
//!
//! Pixel `(i, j)` has column index `i` (x) and row index `j` (y), both zero-based.
//! Rectangles use the canonical `(x_min, y_min, x_max, y_max)` form with
//! `y` growing downwards.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// The full `[0, width] x [0, height]` frame of an image.
    pub fn full(width: f64, height: f64) -> Self {
        Self::new(0.0, 0.0, width, height)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_corners(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn is_finite(&self) -> bool {
        self.corners().iter().all(|v| v.is_finite())
    }

    /// Valid means ordered corners; zero extent is allowed.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn clamp_to(&self, bounds: &Rect) -> Rect {
        let cx = |v: f64| v.clamp(bounds.x_min, bounds.x_max);
        let cy = |v: f64| v.clamp(bounds.y_min, bounds.y_max);
        Rect::new(cx(self.x_min), cy(self.y_min), cx(self.x_max), cy(self.y_max))
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (r.x_min < r.x_max && r.y_min < r.y_max).then_some(r)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Scales x coordinates by `sx` and y coordinates by `sy`.
    pub fn scale(&self, sx: f64, sy: f64) -> Rect {
        Rect::new(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)
    }

    /// Grows a degenerate side to `min_side` around its center, staying inside `bounds`.
    pub fn with_min_side(&self, min_side: f64, bounds: &Rect) -> Rect {
        fn widen(lo: f64, hi: f64, min: f64, blo: f64, bhi: f64) -> (f64, f64) {
            if hi - lo >= min {
                return (lo, hi);
            }
            let c = 0.5 * (lo + hi);
            let mut lo = c - 0.5 * min;
            let mut hi = c + 0.5 * min;
            if lo < blo {
                hi += blo - lo;
                lo = blo;
            }
            if hi > bhi {
                lo -= hi - bhi;
                hi = bhi;
            }
            (lo.max(blo), hi)
        }
        let (x_min, x_max) = widen(self.x_min, self.x_max, min_side, bounds.x_min, bounds.x_max);
        let (y_min, y_max) = widen(self.y_min, self.y_max, min_side, bounds.y_min, bounds.y_max);
        Rect::new(x_min, y_min, x_max, y_max)
    }
}

/// Per-pixel object confidence, row-major with `values[j * width + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::shape(format!(
                "saliency map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!(
                "saliency values must lie in [0, 1], found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Builds a map from a `[H, W]` or `[1, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            &[h, w] | &[1, h, w] => (h, w),
            other => {
                return Err(Error::shape(format!(
                    "saliency tensor must be [H, W] or [1, H, W], got {other:?}"
                )))
            }
        };
        Self::new(w, h, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.values.clone())
            .expect("map dimensions match its values")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at column `i`, row `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value), "saliency value {value} out of [0, 1]");
        self.values[j * self.width + i] = value;
    }

    pub fn bounds(&self) -> Rect {
        Rect::full(self.width as f64, self.height as f64)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}
