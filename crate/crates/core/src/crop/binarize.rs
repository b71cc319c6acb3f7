use crate::error::{Error, Result};
use crate::geometry::SaliencyMap;

/// `x^2 / (x^2 + sigma^2)`.
#[inline]
pub fn soft_binarize_value(x: f64, sigma: f64) -> f64 {
    let x2 = x * x;
    x2 / (x2 + sigma * sigma)
}

/// `2 x sigma^2 / (x^2 + sigma^2)^2`.
#[inline]
pub fn soft_binarize_derivative(x: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = x * x + s2;
    2.0 * x * s2 / (d * d)
}

/// Pushes small saliency values to 0 and saturates larger ones towards 1.
pub fn soft_binarize(map: &SaliencyMap, sigma: f64) -> Result<SaliencyMap> {
    check_sigma(sigma)?;
    let values = map
        .values()
        .iter()
        .map(|&x| soft_binarize_value(x, sigma))
        .collect();
    SaliencyMap::new(map.width(), map.height(), values)
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "soft binarization sigma must be positive, got {sigma}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        for sigma in [0.01, 0.1, 0.7] {
            assert_eq!(soft_binarize_value(0.0, sigma), 0.0);
            assert!((soft_binarize_value(sigma, sigma) - 0.5).abs() < 1e-15);
        }
        assert!((soft_binarize_value(1.0, 0.01) - 1.0 / (1.0 + 1e-4)).abs() < 1e-15);
        assert!((soft_binarize_value(1.0, 0.01) - 0.99990).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let sigma: f64 = 0.01;
        for x in [0.003_f64, 0.01, 0.02, 0.5] {
            let h = 1e-4 * x.max(sigma);
            let fd = (soft_binarize_value(x + h, sigma) - soft_binarize_value(x - h, sigma))
                / (2.0 * h);
            let an = soft_binarize_derivative(x, sigma);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "x={x}: {fd} vs {an}");
        }
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let map = SaliencyMap::zeros(2, 2);
        assert!(matches!(soft_binarize(&map, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(soft_binarize(&map, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn maps_unit_interval_into_half_open_range() {
        let values: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let map = SaliencyMap::new(101, 1, values).unwrap();
        let out = soft_binarize(&map, 0.01).unwrap();
        let v = out.values();
        assert!(v.iter().all(|&y| (0.0..1.0).contains(&y)));
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }
}
