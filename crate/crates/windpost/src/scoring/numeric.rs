//! Numeric CRPS oracle: adaptive trapezoid integration of the squared
//! difference between the forecast CDF and the observation step function.
//!
//! The oracle touches the distribution only through its CDF and its list of
//! non-smooth points, so it stays independent of every closed-form CRPS.

use crate::dist::PredictiveDistribution;
use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 44;

/// CRPS(F, y) = integral of (F(c) - 1{c >= y})^2 dc, absolute tolerance 1e-8.
pub fn crps_numeric(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    crps_numeric_tol(dist, y, 1e-8)
}

pub fn crps_numeric_tol(dist: &PredictiveDistribution, y: f64, tol: f64) -> Result<f64> {
    let (lo, hi) = dist.support_bounds();
    // Outside the support the integrand is exactly 0 or 1.
    let mut total = 0.0;
    if y < lo {
        total += lo - y;
    }
    if y > hi {
        total += y - hi;
    }

    let mut breaks: Vec<f64> = dist
        .knots()
        .into_iter()
        .filter(|&k| k > lo && k < hi)
        .collect();
    if y > lo && y < hi {
        breaks.push(y);
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();

    let span = hi - lo;
    if span <= 0.0 {
        return Ok(total);
    }
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let ind = if b <= y { 0.0 } else { 1.0 };
        // CDF evaluated with one-sided limits at the piece boundaries so step
        // discontinuities at the endpoints do not leak into the interior.
        let f = |c: f64| -> f64 {
            let v = if c == b { dist.cdf_left(b) } else { dist.cdf(c) };
            let d = v - ind;
            d * d
        };
        let piece_tol = (tol * (b - a) / span).max(1e-16);
        total += integrate_piece(&f, a, b, piece_tol)?;
    }
    Ok(total)
}

fn integrate_piece(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    // Seed with a few panels so long smooth pieces refine locally.
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let pa = a + i as f64 * h;
        let pb = if i == PANELS - 1 { b } else { a + (i + 1) as f64 * h };
        let fa = f(pa);
        let fb = f(pb);
        let whole = 0.5 * (fa + fb) * (pb - pa);
        total += refine(f, pa, pb, fa, fb, whole, tol / PANELS as f64, MAX_DEPTH)?;
    }
    Ok(total)
}

fn refine(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let fm = f(m);
    let left = 0.25 * (fa + fm) * (b - a);
    let right = 0.25 * (fm + fb) * (b - a);
    let split = left + right;
    let err = split - whole;
    if err.abs() <= 3.0 * tol || m <= a || m >= b {
        // Richardson extrapolation of the trapezoid pair.
        return Ok(split + err / 3.0);
    }
    if depth == 0 {
        if err.abs() > 1e-3 {
            return Err(Error::NumericsError(format!(
                "CRPS quadrature failed to converge on [{a}, {b}]"
            )));
        }
        return Ok(split + err / 3.0);
    }
    Ok(refine(f, a, m, fa, fm, left, 0.5 * tol, depth - 1)?
        + refine(f, m, b, fm, fb, right, 0.5 * tol, depth - 1)?)
}
