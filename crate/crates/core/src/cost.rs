//! Ground costs: the transport-growth cost `-log cos^2(min(|x-y|, pi/2))`
//! and the quadratic cost `|x-y|^2`.

use std::f64::consts::FRAC_PI_2;

use crate::grid::point_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostSpec {
    /// `-log cos^2(min(|x-y|, pi/2))`; +inf at and beyond pi/2.
    LogCos,
    /// `|x-y|^2`.
    Quadratic,
}

impl CostSpec {
    pub fn eval(self, dim: usize, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        let r = point_distance(dim, a, b);
        self.eval_radial(r)
    }

    pub fn eval_radial(self, r: f64) -> f64 {
        match self {
            CostSpec::LogCos => {
                if r >= FRAC_PI_2 {
                    f64::INFINITY
                } else {
                    -2.0 * r.cos().ln()
                }
            }
            CostSpec::Quadratic => r * r,
        }
    }

    /// Largest distance whose cost stays below `cap` (used to bound the
    /// column window of truncated kernel rows). Conservative from above.
    pub fn radius_for_cost_cap(self, cap: f64) -> f64 {
        if cap <= 0.0 {
            return 0.0;
        }
        match self {
            CostSpec::LogCos => {
                // c(r) <= cap  <=>  cos r >= e^{-cap/2}
                if cap > 700.0 {
                    FRAC_PI_2
                } else {
                    (-cap / 2.0).exp().acos().min(FRAC_PI_2)
                }
            }
            CostSpec::Quadratic => cap.sqrt(),
        }
    }
}

pub fn cost_eval(spec: CostSpec, dim: usize, a: &[f64; 2], b: &[f64; 2]) -> f64 {
    spec.eval(dim, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn logcos_diagonal_quarter_pi_and_cap() {
        assert_eq!(CostSpec::LogCos.eval_radial(0.0), 0.0);
        let c = CostSpec::LogCos.eval_radial(PI / 4.0);
        assert!((c - 2.0_f64.ln()).abs() < 1e-15);
        assert!(CostSpec::LogCos.eval_radial(1.6).is_infinite());
        assert!(CostSpec::LogCos.eval_radial(FRAC_PI_2).is_infinite());
    }

    #[test]
    fn quadratic_basic() {
        let c = CostSpec::Quadratic.eval(2, &[0.0, 0.0], &[0.3, 0.4]);
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn radius_cap_inverts_cost() {
        for &cap in &[1e-6, 1e-3, 0.5, 2.0] {
            for spec in [CostSpec::LogCos, CostSpec::Quadratic] {
                let r = spec.radius_for_cost_cap(cap);
                assert!(spec.eval_radial(r * 0.999) <= cap * 1.0001);
            }
        }
    }

    proptest! {
        #[test]
        fn cost_symmetric_and_nonnegative(x in -1.0f64..2.0, y in -1.0f64..2.0,
                                          u in -1.0f64..2.0, v in -1.0f64..2.0) {
            for spec in [CostSpec::LogCos, CostSpec::Quadratic] {
                let ab = spec.eval(2, &[x, y], &[u, v]);
                let ba = spec.eval(2, &[u, v], &[x, y]);
                prop_assert!(ab == ba);
                prop_assert!(ab >= 0.0);
            }
        }
    }
}
