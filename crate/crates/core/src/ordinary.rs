//! Parametric models for ordinary events: dithering, maximum likelihood
//! fits of the exponential, gamma and Weibull families, model ranking and
//! QQ/PP diagnostics.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::roots::{brent, BrentOptions};
use crate::seeds;
use crate::weibull::WeibullParams;

/// Minimum sample size for [`select_family`].
pub const MIN_SELECTION_SAMPLES: usize = 30;

/// Adds independent `U[-0.5, 0.5]` mm noise to each size.
pub fn dither(sizes_mm: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng_for(seed, seeds::tag::DITHER, 0);
    sizes_mm
        .iter()
        .map(|&s| s + rng.gen_range(-0.5..=0.5))
        .collect()
}

fn check_positive(data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Invalid("no data".into()));
    }
    if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Invalid(format!("data must be positive and finite, found {v}")));
    }
    Ok(())
}

fn check_distinct(data: &[f64]) -> Result<()> {
    if data.iter().all(|&v| v == data[0]) {
        return Err(Error::Degenerate(format!(
            "all {} values equal {}; the shape parameter diverges",
            data.len(),
            data[0]
        )));
    }
    Ok(())
}

/// Weighted Weibull maximum likelihood by profiling out the scale.
///
/// For a fixed shape `w` the scale has the closed form
/// `C(w) = (Σ aᵢ yᵢʷ / Σ aᵢ)^{1/w}`; the shape solves the monotone profile
/// score equation
/// `Σ aᵢ yᵢʷ ln yᵢ / Σ aᵢ yᵢʷ − 1/w − Σ aᵢ ln yᵢ / Σ aᵢ = 0`,
/// bracketed and refined with Brent's method.
pub fn fit_weibull_mle(sizes_mm: &[f64], weights: Option<&[f64]>) -> Result<WeibullParams> {
    check_positive(sizes_mm)?;
    check_distinct(sizes_mm)?;
    let ones;
    let weights = match weights {
        Some(w) => {
            if w.len() != sizes_mm.len() {
                return Err(Error::Dimension {
                    expected: sizes_mm.len(),
                    actual: w.len(),
                });
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Invalid(format!("weights must be positive, found {v}")));
            }
            w
        }
        None => {
            ones = vec![1.0; sizes_mm.len()];
            &ones[..]
        }
    };
    let logs: Vec<f64> = sizes_mm.iter().map(|y| y.ln()).collect();
    let l_max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.iter().sum();
    let mean_log = logs.iter().zip(weights).map(|(l, a)| a * l).sum::<f64>() / total;

    // Σ aᵢ e^{w(lᵢ - L)} and Σ aᵢ e^{w(lᵢ - L)} lᵢ, stable for large w
    let sums = |w: f64| {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for (l, a) in logs.iter().zip(weights) {
            let e = a * (w * (l - l_max)).exp();
            s0 += e;
            s1 += e * l;
        }
        (s0, s1)
    };
    let score = |w: f64| {
        let (s0, s1) = sums(w);
        s1 / s0 - 1.0 / w - mean_log
    };

    let mut lo = 0.5;
    while score(lo) >= 0.0 {
        lo *= 0.5;
        if lo < 1e-8 {
            return Err(Error::Degenerate("Weibull shape below 1e-8".into()));
        }
    }
    let mut hi = 2.0;
    while score(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Degenerate("Weibull shape diverges".into()));
        }
    }
    let shape = brent(score, lo, hi, BrentOptions::default())?;
    let (s0, _) = sums(shape);
    let scale = (l_max + (s0 / total).ln() / shape).exp();
    WeibullParams::new(scale, shape)
}

/// Gradient of the mean (weighted) Weibull log-likelihood in log-parameters,
/// `(C ∂ℓ/∂C, w ∂ℓ/∂w) / Σ aᵢ`; zero at the MLE.
pub fn weibull_score(sizes_mm: &[f64], weights: Option<&[f64]>, p: WeibullParams) -> (f64, f64) {
    let (c, w) = (p.scale, p.shape);
    let mut g_c = 0.0;
    let mut g_w = 0.0;
    let mut total = 0.0;
    for (i, &y) in sizes_mm.iter().enumerate() {
        let a = weights.map_or(1.0, |ws| ws[i]);
        let ln_z = (y / c).ln();
        let zw = (w * ln_z).exp();
        g_c += a * (-w + w * zw);
        g_w += a * (1.0 + w * ln_z - w * zw * ln_z);
        total += a;
    }
    (g_c / total, g_w / total)
}

pub fn weibull_log_likelihood(sizes_mm: &[f64], p: WeibullParams) -> f64 {
    sizes_mm.iter().map(|&y| p.ln_pdf(y)).sum()
}

/// Exponential MLE: rate = 1 / mean.
pub fn fit_exponential_mle(sizes_mm: &[f64]) -> Result<f64> {
    check_positive(sizes_mm)?;
    Ok(sizes_mm.len() as f64 / sizes_mm.iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// Digamma ψ(x) for x > 0: upward recurrence to x ≥ 10, then the
/// asymptotic series through x⁻¹⁰.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - r * (1.0 / 12.0
            - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0)))))
}

/// Trigamma ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + 1.0 / x
        + r / 2.0
        + r / x * (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * 5.0 / 66.0))))
}

/// Gamma MLE: Newton iteration on `ln a − ψ(a) = ln ȳ − mean(ln y)`.
pub fn fit_gamma_mle(sizes_mm: &[f64]) -> Result<GammaParams> {
    check_positive(sizes_mm)?;
    check_distinct(sizes_mm)?;
    let n = sizes_mm.len() as f64;
    let mean = sizes_mm.iter().sum::<f64>() / n;
    let mean_log = sizes_mm.iter().map(|y| y.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(Error::Degenerate("gamma shape equation has no solution".into()));
    }
    let mut a = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..100 {
        let f = a.ln() - digamma(a) - s;
        let df = 1.0 / a - trigamma(a);
        let mut next = a - f / df;
        if !(next > 0.0) {
            next = 0.5 * a;
        }
        let done = ((next - a) / a).abs() < 1e-14;
        a = next;
        if done {
            break;
        }
    }
    let residual = a.ln() - digamma(a) - s;
    if residual.abs() > 1e-8 {
        return Err(Error::Degenerate(format!(
            "gamma shape Newton iteration stalled (residual {residual:e})"
        )));
    }
    Ok(GammaParams {
        shape: a,
        rate: a / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Gamma,
    Weibull,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Exponential => "exponential",
            Family::Gamma => "gamma",
            Family::Weibull => "weibull",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FamilyParams {
    Exponential { rate: f64 },
    Gamma(GammaParams),
    Weibull(WeibullParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Exponential { .. } => Family::Exponential,
            FamilyParams::Gamma(_) => Family::Gamma,
            FamilyParams::Weibull(_) => Family::Weibull,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            FamilyParams::Exponential { .. } => 1,
            _ => 2,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            FamilyParams::Exponential { rate } => rate.ln() - rate * x,
            FamilyParams::Gamma(g) => {
                g.shape * g.rate.ln() - ln_gamma(g.shape) + (g.shape - 1.0) * x.ln() - g.rate * x
            }
            FamilyParams::Weibull(w) => w.ln_pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            FamilyParams::Exponential { rate } => -(-rate * x).exp_m1(),
            FamilyParams::Gamma(g) => gamma_lr(g.shape, g.rate * x),
            FamilyParams::Weibull(w) => w.cdf(x),
        }
    }

    /// Quantile; `guess` seeds the gamma Newton iteration.
    pub fn quantile(&self, p: f64, guess: Option<f64>) -> f64 {
        match *self {
            FamilyParams::Exponential { rate } => -(-p).ln_1p() / rate,
            FamilyParams::Weibull(w) => w.quantile(p),
            FamilyParams::Gamma(g) => gamma_quantile(g, p, guess),
        }
    }
}

fn gamma_quantile(g: GammaParams, p: f64, guess: Option<f64>) -> f64 {
    let cdf = |x: f64| gamma_lr(g.shape, g.rate * x);
    let mean = g.shape / g.rate;
    let mut lo = 0.0;
    let mut hi = mean;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = guess.filter(|&x| x > lo && x < hi).unwrap_or(0.5 * (lo + hi));
    let ln_norm = g.shape * g.rate.ln() - ln_gamma(g.shape);
    for _ in 0..100 {
        let f = cdf(x) - p;
        if f.abs() < 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = (ln_norm + (g.shape - 1.0) * x.ln() - g.rate * x).exp();
        let mut next = x - f / pdf;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-13 * x {
            x = next;
            break;
        }
        x = next;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    pub params: FamilyParams,
    pub n: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub sse_qq: f64,
}

impl FitReport {
    fn new(sorted: &[f64], params: FamilyParams) -> Self {
        let n = sorted.len();
        let k = params.n_params() as f64;
        let log_likelihood: f64 = sorted.iter().map(|&x| params.ln_pdf(x)).sum();
        let theo = theoretical_quantiles(&params, n);
        let sse_qq = sorted.iter().zip(&theo).map(|(e, t)| (e - t).powi(2)).sum();
        FitReport {
            family: params.family(),
            params,
            n,
            log_likelihood,
            aic: 2.0 * k - 2.0 * log_likelihood,
            bic: k * (n as f64).ln() - 2.0 * log_likelihood,
            sse_qq,
        }
    }
}

/// Plotting position of the `i`-th (0-based) order statistic out of `n`.
pub fn plotting_position(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

fn theoretical_quantiles(params: &FamilyParams, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut prev = None;
    for i in 0..n {
        let q = params.quantile(plotting_position(i, n), prev);
        prev = Some(q);
        out.push(q);
    }
    out
}

/// Fits all three candidate families and ranks them by AIC (best first).
pub fn select_family(sizes_mm: &[f64]) -> Result<Vec<FitReport>> {
    if sizes_mm.len() < MIN_SELECTION_SAMPLES {
        return Err(Error::Invalid(format!(
            "family selection needs at least {MIN_SELECTION_SAMPLES} samples, got {}",
            sizes_mm.len()
        )));
    }
    let mut sorted = sizes_mm.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut reports = vec![
        FitReport::new(
            &sorted,
            FamilyParams::Exponential {
                rate: fit_exponential_mle(&sorted)?,
            },
        ),
        FitReport::new(&sorted, FamilyParams::Gamma(fit_gamma_mle(&sorted)?)),
        FitReport::new(&sorted, FamilyParams::Weibull(fit_weibull_mle(&sorted, None)?)),
    ];
    reports.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `(empirical quantile, theoretical quantile)` at plotting positions.
    pub qq: Vec<(f64, f64)>,
    /// `(empirical CDF, theoretical CDF)` at the sorted sample.
    pub pp: Vec<(f64, f64)>,
}

impl Diagnostics {
    pub fn max_abs_qq_deviation(&self) -> f64 {
        self.qq.iter().map(|(e, t)| (e - t).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_pp_deviation(&self) -> f64 {
        self.pp.iter().map(|(e, t)| (e - t).abs()).fold(0.0, f64::max)
    }
}

pub fn diagnostics(sizes_mm: &[f64], params: &FamilyParams) -> Diagnostics {
    let mut sorted = sizes_mm.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let theo = theoretical_quantiles(params, n);
    let qq = sorted.iter().copied().zip(theo).collect();
    let pp = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (plotting_position(i, n), params.cdf(x)))
        .collect();
    Diagnostics { qq, pp }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Weibull};

    fn weibull_sample(scale: f64, shape: f64, n: usize, seed: u64) -> Vec<f64> {
        let d = Weibull::new(scale, shape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    fn exp_sample(rate: f64, n: usize, seed: u64) -> Vec<f64> {
        let d = Exp::new(rate).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn dither_bounds_and_determinism() {
        let out = dither(&[12.0; 1000], 5);
        assert!(out.iter().all(|v| (11.5..=12.5).contains(v)));
        assert_eq!(out, dither(&[12.0; 1000], 5));
        assert_ne!(out, dither(&[12.0; 1000], 6));
        assert!(dither(&[], 1).is_empty());
    }

    #[test]
    fn dither_is_unbiased() {
        let out = dither(&vec![12.0; 1_000_000], 9);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 12.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn weibull_recovery() {
        let data = weibull_sample(12.5, 1.14, 100_000, 1);
        let p = fit_weibull_mle(&data, None).unwrap();
        assert!((p.scale / 12.5 - 1.0).abs() < 0.02, "{p:?}");
        assert!((p.shape / 1.14 - 1.0).abs() < 0.02, "{p:?}");
        let (g_c, g_w) = weibull_score(&data, None, p);
        assert!(g_c.hypot(g_w) < 1e-6, "{g_c} {g_w}");
    }

    #[test]
    fn weibull_weighted_stationarity() {
        let data = weibull_sample(8.0, 2.0, 5_000, 2);
        let w: Vec<f64> = (0..data.len()).map(|i| 0.1 + (i % 7) as f64).collect();
        let p = fit_weibull_mle(&data, Some(&w)).unwrap();
        let (g_c, g_w) = weibull_score(&data, Some(&w), p);
        assert!(g_c.hypot(g_w) < 1e-6);
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let data = weibull_sample(12.5, 1.14, 10_000, 3);
        let a = fit_weibull_mle(&data, None).unwrap();
        let b = fit_weibull_mle(&data, Some(&vec![3.7; data.len()])).unwrap();
        assert!((a.scale / b.scale - 1.0).abs() < 1e-8);
        assert!((a.shape / b.shape - 1.0).abs() < 1e-8);
    }

    #[test]
    fn weibull_on_exponential_data_has_unit_shape() {
        let data = exp_sample(0.0836, 100_000, 4);
        let p = fit_weibull_mle(&data, None).unwrap();
        assert!((p.shape - 1.0).abs() < 0.02, "{p:?}");
    }

    #[test]
    fn weibull_degenerate() {
        assert!(matches!(fit_weibull_mle(&[4.0; 10], None), Err(Error::Degenerate(_))));
        assert!(fit_weibull_mle(&[1.0, -2.0], None).is_err());
        assert!(fit_weibull_mle(&[1.0, 2.0], Some(&[1.0])).is_err());
        assert!(fit_weibull_mle(&[1.0, 2.0], Some(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn exponential_rate() {
        let rate = fit_exponential_mle(&[11.0, 12.92, 11.96]).unwrap();
        assert!((rate - 0.0836).abs() < 5e-5, "{rate}");
        assert!(fit_exponential_mle(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn gamma_on_exponential_data() {
        let g = fit_gamma_mle(&exp_sample(0.1, 100_000, 5)).unwrap();
        assert!((g.shape - 1.0).abs() < 0.02, "{g:?}");
        assert!(matches!(fit_gamma_mle(&[3.0; 5]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn special_functions() {
        // ψ(1) = −γ, ψ(1/2) = −γ − 2 ln 2, ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let g = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + g).abs() < 1e-12);
        assert!((digamma(0.5) + g + 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((digamma(123.4) - (digamma(122.4) + 1.0 / 122.4)).abs() < 1e-12);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-11);
    }

    #[test]
    fn selection_prefers_weibull() {
        let data = weibull_sample(12.5, 1.14, 100_000, 6);
        let ranked = select_family(&data).unwrap();
        assert_eq!(ranked[0].family, Family::Weibull);
        for r in &ranked {
            let k = r.params.n_params() as f64;
            assert!((r.aic - (2.0 * k - 2.0 * r.log_likelihood)).abs() < 1e-6);
            assert!((r.bic - (k * (r.n as f64).ln() - 2.0 * r.log_likelihood)).abs() < 1e-6);
        }
        let weibull = ranked.iter().find(|r| r.family == Family::Weibull).unwrap();
        let expo = ranked.iter().find(|r| r.family == Family::Exponential).unwrap();
        assert!(weibull.sse_qq < expo.sse_qq);
    }

    #[test]
    fn selection_on_exponential_data_nests() {
        let data = exp_sample(0.0836, 20_000, 7);
        let ranked = select_family(&data).unwrap();
        let aic = |f| ranked.iter().find(|r| r.family == f).unwrap().aic;
        assert!((aic(Family::Exponential) - aic(Family::Weibull)).abs() < 2.0);
    }

    #[test]
    fn selection_needs_thirty_samples() {
        assert!(select_family(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).is_err());
    }

    #[test]
    fn gamma_quantiles_invert_cdf() {
        let p = FamilyParams::Gamma(GammaParams { shape: 1.26, rate: 0.105 });
        for &q in &[1e-4, 0.01, 0.3, 0.5, 0.9, 0.9999] {
            let x = p.quantile(q, None);
            assert!((p.cdf(x) - q).abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn diagnostics_shape() {
        let data = weibull_sample(12.5, 1.14, 1000, 8);
        let fit = FamilyParams::Weibull(fit_weibull_mle(&data, None).unwrap());
        let d = diagnostics(&data, &fit);
        assert_eq!(d.pp.len(), data.len());
        assert!(d.pp.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert!(d.qq.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert!(d.pp.iter().all(|&(a, b)| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)));
        assert!(d.pp[0].0 >= 0.0 && d.pp[0].1 >= 0.0);
    }

    #[test]
    fn diagnostics_converge_with_n() {
        // PP deviation of a correctly specified fit shrinks like n^{-1/2}
        let devs: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&n| {
                let data = weibull_sample(12.5, 1.14, n, 10);
                let fit = FamilyParams::Weibull(fit_weibull_mle(&data, None).unwrap());
                diagnostics(&data, &fit).max_abs_pp_deviation()
            })
            .collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        assert!(devs[2] < 0.01);
    }
}
