//! Derivative-free root finding for strictly increasing scalar functions.

use crate::error::{Error, Result};

const MAX_EXPANSIONS: usize = 64;
const MAX_ITER: usize = 200;

/// Absolute residual at which a root is accepted.
pub const ROOT_FTOL: f64 = 1e-13;

/// Root of a strictly increasing `g` whose slope is at least `slope_lower > 0`.
///
/// The initial bracket is `[-|g(0)|/slope_lower - 1, |g(0)|/slope_lower + 1]`,
/// widened by doubling. Inside the bracket a regula falsi step with the Illinois
/// modification is taken, falling back to bisection whenever the bracket fails
/// to halve.
pub fn increasing_root(g: impl Fn(f64) -> f64, slope_lower: f64) -> Result<f64> {
    let v = g(0.0);
    if !v.is_finite() {
        return Err(Error::numerical("constraint value at the origin is not finite", None));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let slope = if slope_lower > 0.0 { slope_lower } else { 1.0 };
    let w = v.abs() / slope + 1.0;
    if v > 0.0 {
        // Root lies below zero.
        let mut lo = -w;
        let mut glo = g(lo);
        let mut expansions = 0;
        while glo > 0.0 {
            expansions += 1;
            if expansions > MAX_EXPANSIONS || !glo.is_finite() {
                return Err(Error::numerical("no sign change below the origin", None));
            }
            lo *= 2.0;
            glo = g(lo);
        }
        bracketed(&g, lo, glo, 0.0, v)
    } else {
        let mut hi = w;
        let mut ghi = g(hi);
        let mut expansions = 0;
        while ghi < 0.0 {
            expansions += 1;
            if expansions > MAX_EXPANSIONS || !ghi.is_finite() {
                return Err(Error::numerical("no sign change above the origin", None));
            }
            hi *= 2.0;
            ghi = g(hi);
        }
        bracketed(&g, 0.0, v, hi, ghi)
    }
}

/// Root of an increasing `g` on `[lo, hi]` with `g(lo) <= 0 <= g(hi)`.
pub fn bracketed(g: &impl Fn(f64) -> f64, mut lo: f64, mut glo: f64, mut hi: f64, mut ghi: f64) -> Result<f64> {
    if glo > 0.0 || ghi < 0.0 {
        return Err(Error::numerical("bracket does not enclose a sign change", None));
    }
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    // 1 = lo side kept last time, 2 = hi side kept last time.
    let mut side = 0u8;
    let mut width = hi - lo;
    for _ in 0..MAX_ITER {
        let mut x = hi - ghi * (hi - lo) / (ghi - glo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if !gx.is_finite() {
            return Err(Error::numerical("constraint evaluation is not finite", None));
        }
        if gx.abs() <= ROOT_FTOL {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
            glo = gx;
            if side == 1 {
                ghi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            ghi = gx;
            if side == 2 {
                glo *= 0.5;
            }
            side = 2;
        }
        let new_width = hi - lo;
        if new_width > 0.5 * width {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.abs() <= ROOT_FTOL {
                return Ok(mid);
            }
            if gm < 0.0 {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
                ghi = gm;
            }
            side = 0;
        }
        width = hi - lo;
        if width <= 4.0 * f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            return Ok(if glo.abs() < ghi.abs() { lo } else { hi });
        }
    }
    Err(Error::numerical("root iteration budget exhausted", None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn linear_root() {
        let x = increasing_root(|x| 2.0 * x - 3.0, 2.0).unwrap();
        assert!((x - 1.5).abs() < 1e-13);
    }

    #[test]
    fn smooth_perturbed_root() {
        let g = |x: f64| x + 0.1 * libm::sin(x) - 1.0;
        let oracle = bisect(g, 0.0, 2.0);
        let x = increasing_root(g, 0.9).unwrap();
        assert!((x - oracle).abs() < 1e-12);
        assert!((x - 0.920_414_720_25).abs() < 1e-10);
    }

    #[test]
    fn far_root_needs_expansion() {
        let x = increasing_root(|x| 1e-3 * (x - 5e4), 1.0).unwrap();
        assert!((x - 5e4).abs() < 1e-6);
    }

    #[test]
    fn flat_function_fails() {
        assert!(matches!(increasing_root(|_| 1.0, 1.0), Err(Error::NumericalFailure { .. })));
    }
}
