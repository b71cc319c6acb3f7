use crate::geometry::SaliencyMap;

/// Raw image moments up to second order plus the derived centroid and spread.
///
/// `cx`, `cy`, `sigma_x` and `sigma_y` are zero when the map carries no mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m00: f64,
    pub m10: f64,
    pub m01: f64,
    pub m20: f64,
    pub m02: f64,
    pub cx: f64,
    pub cy: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Moments {
    pub fn from_raw(m00: f64, m10: f64, m01: f64, m20: f64, m02: f64) -> Self {
        let (cx, cy, sigma_x, sigma_y) = if m00 > 0.0 {
            let cx = m10 / m00;
            let cy = m01 / m00;
            let var_x = (m20 / m00 - cx * cx).max(0.0);
            let var_y = (m02 / m00 - cy * cy).max(0.0);
            (cx, cy, var_x.sqrt(), var_y.sqrt())
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        Self {
            m00,
            m10,
            m01,
            m20,
            m02,
            cx,
            cy,
            sigma_x,
            sigma_y,
        }
    }

    pub fn has_mass(&self) -> bool {
        self.m00 > 0.0
    }
}

/// Accumulates the five moments row by row (`j` outer, `i` inner).
pub fn compute_moments(map: &SaliencyMap) -> Moments {
    let w = map.width();
    let (mut m00, mut m10, mut m01, mut m20, mut m02) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in map.values().chunks_exact(w.max(1)).enumerate() {
        let y = j as f64;
        for (i, &s) in row.iter().enumerate() {
            let x = i as f64;
            m00 += s;
            m10 += x * s;
            m01 += y * s;
            m20 += x * x * s;
            m02 += y * y * s;
        }
    }
    Moments::from_raw(m00, m10, m01, m20, m02)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass() {
        let mut map = SaliencyMap::zeros(8, 8);
        map.set(3, 5, 1.0);
        let m = compute_moments(&map);
        assert_eq!((m.cx, m.cy, m.sigma_x, m.sigma_y), (3.0, 5.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_five_by_five() {
        let map = SaliencyMap::new(5, 5, vec![1.0; 25]).unwrap();
        let m = compute_moments(&map);
        assert_eq!(m.m00, 25.0);
        assert_eq!((m.cx, m.cy), (2.0, 2.0));
        assert!((m.sigma_x - 2f64.sqrt()).abs() < 1e-12);
        assert!((m.sigma_y - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_map_has_no_mass() {
        let m = compute_moments(&SaliencyMap::zeros(4, 3));
        assert!(!m.has_mass());
        assert_eq!(m.m00, 0.0);
        assert!(m.cx.is_finite() && m.sigma_x.is_finite());
    }

    #[test]
    fn non_square_axes_are_not_swapped() {
        // one pixel in a wide strip: column 6, row 1
        let mut map = SaliencyMap::zeros(7, 2);
        map.set(6, 1, 0.5);
        let m = compute_moments(&map);
        assert_eq!((m.cx, m.cy), (6.0, 1.0));
        assert_eq!(m.m10, 3.0);
        assert_eq!(m.m02, 0.5);
    }
}
