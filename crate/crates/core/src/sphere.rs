//! Exact expanding-ball solutions via modified Bessel functions of the first
//! kind. With `I_a` the modified Bessel function, define
//! `H_a(x) = x^-a I_a(x)` and `K_a(x) = x^a I_a(x)`. A unit-density ball of
//! radius `r0` evolves with radius
//! `r(t) = 1/2 K_{d/2}^{-1}(e^{4 lambda t} K_{d/2}(2 r0))` and radial pressure
//! `p_t(s) = lambda (1 - H_{d/2-1}(2 s) / H_{d/2-1}(2 r(t)))_+`.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, WfrError};

/// Series validity window; all experiments stay far below it.
pub const BESSEL_X_MAX: f64 = 60.0;
const MAX_TERMS: usize = 300;

/// Gamma function at half-integer arguments by recursion from
/// Gamma(1) = 1 and Gamma(1/2) = sqrt(pi). `twice_x` is `2x`.
fn gamma_half_integer(twice_x: i64) -> f64 {
    debug_assert!(twice_x >= 1);
    let mut val = if twice_x % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut k = if twice_x % 2 == 0 { 2 } else { 1 };
    while k < twice_x {
        val *= k as f64 / 2.0;
        k += 2;
    }
    val
}

fn check_half_integer_order(alpha: f64) -> Result<i64> {
    let twice = (2.0 * alpha).round();
    if (2.0 * alpha - twice).abs() > 1e-12 || twice < -1.0 {
        return Err(WfrError::Domain(format!(
            "Bessel order must be a half-integer >= -1/2, got {alpha}"
        )));
    }
    Ok(twice as i64)
}

fn check_window(x: f64) -> Result<()> {
    if !(0.0..=BESSEL_X_MAX).contains(&x) {
        return Err(WfrError::Domain(format!(
            "Bessel argument {x} outside the series window [0, {BESSEL_X_MAX}]"
        )));
    }
    Ok(())
}

/// Power series `sum_m (x/2)^(2m) / (m! Gamma(m + alpha + 1))`, the common
/// factor of `I_a`, `H_a` and `K_a` after `(x/2)^a` is pulled out. Terms are
/// summed until they fall below 1e-16 of the partial sum.
fn series(alpha_twice: i64, x: f64) -> f64 {
    let q = 0.25 * x * x; // (x/2)^2
    let mut term = 1.0 / gamma_half_integer(alpha_twice + 2);
    let mut sum = term;
    for m in 1..MAX_TERMS {
        let mf = m as f64;
        term *= q / (mf * (mf + alpha_twice as f64 / 2.0));
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

/// Modified Bessel function of the first kind `I_alpha(x)` for half-integer
/// orders `alpha >= -1/2` and `0 <= x <= 60`.
pub fn bessel_i(alpha: f64, x: f64) -> Result<f64> {
    let twice = check_half_integer_order(alpha)?;
    check_window(x)?;
    if x == 0.0 {
        return Ok(match twice.cmp(&0) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Less => f64::INFINITY,
        });
    }
    Ok((0.5 * x).powf(alpha) * series(twice, x))
}

/// `H_alpha(x) = x^-alpha I_alpha(x)`, evaluated with the `x^alpha` factor
/// cancelled inside the series so `x = 0` is regular:
/// `H_alpha(0) = 1 / (2^alpha Gamma(alpha + 1))`.
pub fn bessel_h(alpha: f64, x: f64) -> Result<f64> {
    let twice = check_half_integer_order(alpha)?;
    check_window(x)?;
    Ok(0.5_f64.powf(alpha) * series(twice, x))
}

/// `K_alpha(x) = x^alpha I_alpha(x)`; strictly increasing in `x` for
/// `alpha > 0`, with `K_alpha(0) = 0`.
pub fn bessel_k_growth(alpha: f64, x: f64) -> Result<f64> {
    let twice = check_half_integer_order(alpha)?;
    check_window(x)?;
    if x == 0.0 {
        return Ok(if twice == 0 { 1.0 } else if twice > 0 { 0.0 } else { f64::INFINITY });
    }
    // K_a(x) = x^a (x/2)^a S = (x^2/2)^a S
    Ok((0.5 * x * x).powf(alpha) * series(twice, x))
}

/// Exact spherical solution: dimension, growth strength and initial radius.
/// The growth coupling is the fixed rate constant 4 = 2^2 of the flow.
#[derive(Debug, Clone, Copy)]
pub struct SphereSolution {
    pub dim: usize,
    pub lambda: f64,
    pub r0: f64,
}

impl SphereSolution {
    pub fn new(dim: usize, lambda: f64, r0: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(WfrError::InvalidArgument(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if !(r0 > 0.0) || !(lambda > 0.0) {
            return Err(WfrError::InvalidArgument("need r0 > 0 and lambda > 0".into()));
        }
        Ok(SphereSolution { dim, lambda, r0 })
    }

    fn order(&self) -> f64 {
        self.dim as f64 / 2.0
    }

    /// Ball radius at time `t`, by bracketed bisection of the strictly
    /// increasing map `x -> K_{d/2}(x)` (tolerance 1e-12 on the radius).
    pub fn radius_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(WfrError::InvalidArgument(format!("t must be >= 0, got {t}")));
        }
        let a = self.order();
        let target = (4.0 * self.lambda * t).exp() * bessel_k_growth(a, 2.0 * self.r0)?;
        let mut lo = 2.0 * self.r0;
        let mut hi = lo;
        loop {
            hi *= 2.0;
            if hi > BESSEL_X_MAX {
                return Err(WfrError::Domain("t too large: radius beyond the Bessel window".into()));
            }
            if bessel_k_growth(a, hi)? >= target {
                break;
            }
        }
        while hi - lo > 5e-13 {
            let mid = 0.5 * (lo + hi);
            if bessel_k_growth(a, mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.25 * (lo + hi))
    }

    /// Radial pressure profile at time `t` and distance `s` from the center.
    pub fn pressure_profile(&self, t: f64, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(WfrError::InvalidArgument("radial coordinate must be >= 0".into()));
        }
        let r = self.radius_at(t)?;
        if s >= r {
            return Ok(0.0);
        }
        let a = self.order() - 1.0;
        let p = self.lambda * (1.0 - bessel_h(a, 2.0 * s)? / bessel_h(a, 2.0 * r)?);
        Ok(p.max(0.0))
    }

    /// Writes `sphere_ref.csv` rows `t,r,p0` (p0 = pressure at the origin)
    /// over `samples+1` uniform times in `[0, t_final]`.
    pub fn write_reference_csv(&self, path: &Path, t_final: f64, samples: usize) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,r,p0")?;
        for k in 0..=samples {
            let t = t_final * k as f64 / samples.max(1) as f64;
            let r = self.radius_at(t)?;
            let p0 = self.pressure_profile(t, 0.0)?;
            writeln!(out, "{t:.16e},{r:.16e},{p0:.16e}")?;
        }
        out.flush()?;
        Ok(())
    }
}
