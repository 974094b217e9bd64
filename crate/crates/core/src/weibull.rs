//! Two-parameter Weibull distribution used for ordinary events.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale `C` (mm) and shape `w` of a Weibull distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub scale: f64,
    pub shape: f64,
}

impl WeibullParams {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0 && shape.is_finite() && shape > 0.0) {
            return Err(Error::Invalid(format!(
                "Weibull parameters must be positive and finite (scale {scale}, shape {shape})"
            )));
        }
        Ok(WeibullParams { scale, shape })
    }

    /// `(x / C)^w`, the cumulative hazard.
    #[inline]
    pub fn hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (x / self.scale).powf(self.shape)
        }
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        -(-self.hazard(x)).exp_m1()
    }

    #[inline]
    pub fn survival(&self, x: f64) -> f64 {
        (-self.hazard(x)).exp()
    }

    /// `ln F(x)`, accurate in both tails; `-inf` at `x <= 0`.
    #[inline]
    pub fn ln_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let h = self.hazard(x);
        if h > 0.7 {
            (-(-h).exp()).ln_1p()
        } else {
            (-(-h).exp_m1()).ln()
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = x / self.scale;
        self.shape.ln() - self.scale.ln() + (self.shape - 1.0) * z.ln() - z.powf(self.shape)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.scale * (-(-p).ln_1p()).powf(1.0 / self.shape)
    }
}

/// Negative log-density and its partial derivatives with respect to scale
/// and shape: `(nll, ∂nll/∂C, ∂nll/∂w)`.
#[inline]
pub fn nll_with_grad(y: f64, p: WeibullParams) -> (f64, f64, f64) {
    let (c, w) = (p.scale, p.shape);
    let ln_z = (y / c).ln();
    let zw = (w * ln_z).exp();
    let nll = -w.ln() + c.ln() - (w - 1.0) * ln_z + zw;
    let d_c = (w - w * zw) / c;
    let d_w = -1.0 / w - ln_z + zw * ln_z;
    (nll, d_c, d_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_at_scale() {
        for (c, w) in [(1.0, 1.0), (12.541, 1.135), (3.0, 0.4), (80.0, 7.0)] {
            let p = WeibullParams::new(c, w).unwrap();
            assert!((p.cdf(c) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(WeibullParams::new(0.0, 1.0).is_err());
        assert!(WeibullParams::new(1.0, -1.0).is_err());
        assert!(WeibullParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn exponential_nll() {
        let (nll, _, _) = nll_with_grad(1.0, WeibullParams::new(1.0, 1.0).unwrap());
        assert!((nll - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scale_gradient_closed_form() {
        // d/dC [ln C + y/C] at C = y = 2, w = 1 vanishes
        let (_, d_c, _) = nll_with_grad(2.0, WeibullParams::new(2.0, 1.0).unwrap());
        assert!(d_c.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            y in 0.5f64..80.0, c in 1.0f64..40.0, w in 0.3f64..4.0,
        ) {
            let p = WeibullParams::new(c, w).unwrap();
            let (_, d_c, d_w) = nll_with_grad(y, p);
            let h = 1e-5;
            let f = |c: f64, w: f64| nll_with_grad(y, WeibullParams { scale: c, shape: w }).0;
            let n_c = (f(c + h, w) - f(c - h, w)) / (2.0 * h);
            let n_w = (f(c, w + h) - f(c, w - h)) / (2.0 * h);
            prop_assert!((d_c - n_c).abs() <= 1e-6 * (1.0 + n_c.abs()));
            prop_assert!((d_w - n_w).abs() <= 1e-6 * (1.0 + n_w.abs()));
        }

        #[test]
        fn quantile_inverts_cdf(p in 1e-9f64..0.999_999, c in 0.5f64..50.0, w in 0.3f64..5.0) {
            let d = WeibullParams::new(c, w).unwrap();
            prop_assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-12);
        }

        #[test]
        fn ln_cdf_consistent(x in 1e-3f64..200.0) {
            let d = WeibullParams::new(12.5, 1.14).unwrap();
            prop_assert!((d.ln_cdf(x).exp() - d.cdf(x)).abs() < 1e-14);
        }
    }
}
