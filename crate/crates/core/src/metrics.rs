//! Crop evaluation metrics.

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Intersection over union; zero for disjoint or doubly degenerate rectangles.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |r| r.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Boundary displacement error: mean absolute displacement of the four edges,
/// with vertical edges normalized by image width and horizontal ones by height.
pub fn bde(a: &Rect, b: &Rect, image_w: usize, image_h: usize) -> Result<f64> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::Parameter(format!(
            "image dimensions must be positive, got {image_w}x{image_h}"
        )));
    }
    let (w, h) = (image_w as f64, image_h as f64);
    Ok(((a.x_min - b.x_min).abs() / w
        + (a.x_max - b.x_max).abs() / w
        + (a.y_min - b.y_min).abs() / h
        + (a.y_max - b.y_max).abs() / h)
        / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = Rect::new(0.0, 0.0, 100.0, 100.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Rect::new(200.0, 0.0, 300.0, 50.0)), 0.0);
        let b = Rect::new(50.0, 0.0, 150.0, 100.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let p = Rect::new(5.0, 5.0, 5.0, 5.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn bde_examples() {
        let a = Rect::new(0.0, 0.0, 100.0, 100.0);
        assert_eq!(bde(&a, &a, 100, 100).unwrap(), 0.0);
        let right = Rect::new(0.0, 0.0, 90.0, 100.0);
        assert!((bde(&a, &right, 100, 100).unwrap() - 0.025).abs() < 1e-12);
        let half = Rect::new(25.0, 25.0, 75.0, 75.0);
        assert!((bde(&a, &half, 100, 100).unwrap() - 0.25).abs() < 1e-12);
        assert!(bde(&a, &half, 0, 100).is_err());
    }
}
