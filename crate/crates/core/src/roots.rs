//! Bracketed one-dimensional root finding (Brent's method).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BrentOptions {
    /// Absolute tolerance on the root location.
    pub x_tol: f64,
    /// Stop as soon as `|f(x)| <= f_tol`.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for BrentOptions {
    fn default() -> Self {
        BrentOptions {
            x_tol: 0.0,
            f_tol: 0.0,
            max_iter: 200,
        }
    }
}

/// Finds a root of `f` in `[a, b]`, which must bracket a sign change.
///
/// Combines inverse quadratic interpolation and secant steps with bisection
/// fallback, so convergence is guaranteed once the bracket is valid. With
/// zero tolerances the search runs until the bracket collapses to adjacent
/// floating point numbers.
pub fn brent<F>(mut f: F, a: f64, b: f64, opts: BrentOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Root(format!(
            "non-finite function value at bracket ends ({fa}, {fb})"
        )));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Root(format!(
            "[{a}, {b}] does not bracket a root (f = {fa}, {fb})"
        )));
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.x_tol;
        let m = 0.5 * (c - b);
        if fb == 0.0 || fb.abs() <= opts.f_tol || m.abs() <= tol {
            return Ok(b);
        }

        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }

        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::Root(format!("non-finite function value at {b}")));
        }
    }
    Err(Error::Root(format!(
        "no convergence after {} iterations",
        opts.max_iter
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, BrentOptions::default()).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_bracket() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, BrentOptions::default()).is_err());
    }

    #[test]
    fn endpoint_root() {
        assert_eq!(brent(|x| x, 0.0, 1.0, BrentOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn f_tolerance_stops_early() {
        let opts = BrentOptions {
            f_tol: 1e-3,
            ..Default::default()
        };
        let r = brent(|x| x - 0.3, 0.0, 1.0, opts).unwrap();
        assert!((r - 0.3).abs() <= 1e-3);
    }
}
