//! Training losses.

use crate::error::{Error, Result};
use crate::geometry::SaliencyMap;
use crate::offsets::OffsetCoefficients;
use crate::tape::bce_term;

pub use crate::tape::BCE_EPS;

/// Loss components of one sample. `total = saliency_loss + lambda * offset_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub saliency_loss: f64,
    pub offset_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Pixel-wise binary cross-entropy summed over the map.
pub fn bce_loss(predicted: &SaliencyMap, target: &SaliencyMap) -> Result<f64> {
    if (predicted.width(), predicted.height()) != (target.width(), target.height()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but target is {}x{}",
            predicted.width(),
            predicted.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(predicted
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &s)| bce_term(p, s))
        .sum())
}

/// Squared Euclidean distance between coefficient vectors.
pub fn offset_l2_loss(predicted: &OffsetCoefficients, target: &OffsetCoefficients) -> f64 {
    predicted
        .to_array()
        .iter()
        .zip(target.to_array())
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

pub fn total_loss(saliency_loss: f64, offset_loss: f64, lambda: f64) -> Result<LossReport> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("loss weight must be non-negative, got {lambda}")));
    }
    Ok(LossReport {
        saliency_loss,
        offset_loss,
        total: saliency_loss + lambda * offset_loss,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: f64) -> SaliencyMap {
        SaliencyMap::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn bce_examples() {
        let half = SaliencyMap::new(2, 2, vec![0.5; 4]).unwrap();
        let l = bce_loss(&half, &half).unwrap();
        assert!((l / 4.0 - std::f64::consts::LN_2).abs() < 1e-15);

        let near = bce_loss(&map(1.0 - 1e-7), &map(1.0)).unwrap();
        assert!((near - 1e-7).abs() < 1e-12);

        let quarter = bce_loss(&map(0.25), &map(1.0)).unwrap();
        assert!((quarter - 4f64.ln()).abs() < 1e-15);

        // saturated predictions stay finite
        assert!(bce_loss(&map(0.0), &map(1.0)).unwrap().is_finite());
    }

    #[test]
    fn bce_shape_mismatch() {
        let a = SaliencyMap::zeros(2, 3);
        let b = SaliencyMap::zeros(3, 2);
        assert!(matches!(bce_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_examples() {
        let z = OffsetCoefficients::ZERO;
        assert_eq!(offset_l2_loss(&z, &z), 0.0);
        let one = OffsetCoefficients { alpha_t: 0.1, ..z };
        assert!((offset_l2_loss(&one, &z) - 0.01).abs() < 1e-15);
        let four = OffsetCoefficients::from_array([0.1, 0.2, 0.3, 0.4]);
        assert!((offset_l2_loss(&four, &z) - 0.30).abs() < 1e-15);
    }

    #[test]
    fn total_examples() {
        assert!((total_loss(0.5, 0.2, 1.0).unwrap().total - 0.7).abs() < 1e-15);
        assert_eq!(total_loss(0.5, 9.0, 0.0).unwrap().total, 0.5);
        assert_eq!(total_loss(1.0, 0.5, 2.0).unwrap().total, 2.0);
        assert!(total_loss(1.0, 1.0, -1.0).is_err());
    }
}
