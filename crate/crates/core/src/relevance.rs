//! Size-dependent sample weights for imbalanced targets.
//!
//! Control points sit at empirical percentiles of the training targets with
//! value `p / 100`, so the rarest large sizes weigh 1 and the bulk of small
//! stones weighs little. Between control points the function is a
//! monotone piecewise cubic Hermite interpolant (PCHIP).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer percentile grid `1, 2, ..., 100`.
pub fn default_percentile_grid() -> Vec<f64> {
    (1..=100).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl RelevanceFunction {
    /// Builds the interpolant through explicit control points.
    pub fn from_control_points(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Dimension {
                expected: xs.len(),
                actual: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::Degenerate("relevance needs at least two distinct sizes".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("control points must be finite".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("control sizes must be strictly increasing".into()));
        }
        if ys.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("control relevances must be nondecreasing".into()));
        }
        let slopes = pchip_slopes(&xs, &ys);
        Ok(RelevanceFunction { xs, ys, slopes })
    }

    pub fn control_xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn control_ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn eval(&self, size_mm: f64) -> f64 {
        let n = self.xs.len();
        if size_mm <= self.xs[0] {
            return self.ys[0];
        }
        if size_mm >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // first index with xs[k] > size, so size ∈ [xs[k-1], xs[k])
        let k = self.xs.partition_point(|&x| x <= size_mm);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (y0, y1) = (self.ys[k - 1], self.ys[k]);
        let (d0, d1) = (self.slopes[k - 1], self.slopes[k]);
        let h = x1 - x0;
        let t = (size_mm - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    }

    /// Writes `size_mm,relevance` control points.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["size_mm", "relevance"])?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Nearest-rank empirical percentile of sorted data, `p ∈ (0, 100]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Builds the relevance function from training targets.
pub fn build_relevance(sizes_mm: &[f64], percentile_grid: &[f64]) -> Result<RelevanceFunction> {
    if sizes_mm.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("sizes must be finite".into()));
    }
    if percentile_grid.iter().any(|&p| !(p > 0.0 && p <= 100.0)) {
        return Err(Error::Invalid("percentiles must lie in (0, 100]".into()));
    }
    if !percentile_grid.contains(&1.0) || !percentile_grid.contains(&100.0) {
        return Err(Error::Invalid("percentile grid must include 1 and 100".into()));
    }
    let mut sorted = sizes_mm.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Degenerate(
            "relevance needs at least two distinct sizes".into(),
        ));
    }
    let mut grid = percentile_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut xs: Vec<f64> = Vec::with_capacity(grid.len());
    let mut ys: Vec<f64> = Vec::with_capacity(grid.len());
    for p in grid {
        let x = nearest_rank(&sorted, p);
        let y = p / 100.0;
        match xs.last() {
            Some(&last) if last == x => *ys.last_mut().unwrap() = y,
            _ => {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    RelevanceFunction::from_control_points(xs, ys)
}

pub fn eval_relevance(f: &RelevanceFunction, size_mm: f64) -> f64 {
    f.eval(size_mm)
}

/// Fritsch–Carlson derivatives with the one-sided three-point end rule
/// used by common scientific libraries.
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let m: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![m[0], m[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if m[k - 1] == 0.0 || m[k] == 0.0 || m[k - 1].signum() != m[k].signum() {
            continue;
        }
        let w1 = 2.0 * h[k] + h[k - 1];
        let w2 = h[k] + 2.0 * h[k - 1];
        d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
    }
    d[0] = end_slope(h[0], h[1], m[0], m[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> RelevanceFunction {
        RelevanceFunction::from_control_points(vec![0.0, 10.0, 20.0, 30.0], vec![0.1, 0.2, 0.6, 0.7])
            .unwrap()
    }

    #[test]
    fn matches_reference_pchip() {
        // values from an independent PCHIP implementation
        let f = reference();
        assert!((f.eval(15.0) - 0.39999999999999997).abs() < 1e-12);
        assert!((f.eval(5.0) - 0.13).abs() < 1e-12);
        assert!((f.eval(25.0) - 0.6699999999999999).abs() < 1e-12);
    }

    #[test]
    fn exact_at_control_points_and_clamped() {
        let f = reference();
        for (x, y) in f.control_xs().iter().zip(f.control_ys()) {
            assert!((f.eval(*x) - y).abs() < 1e-12);
        }
        assert_eq!(f.eval(-5.0), 0.1);
        assert_eq!(f.eval(99.0), 0.7);
    }

    #[test]
    fn uniform_sizes() {
        let sizes: Vec<f64> = (1..=100).map(f64::from).collect();
        let f = build_relevance(&sizes, &default_percentile_grid()).unwrap();
        assert!((f.eval(50.0) - 0.5).abs() < 0.01);
        assert_eq!(f.eval(100.0), 1.0);
        assert_eq!(f.eval(1.0), 0.01);
        assert_eq!(f.eval(0.2), 0.01);
    }

    #[test]
    fn duplicates_keep_largest_relevance() {
        let mut sizes = vec![2.0; 90];
        sizes.extend((0..10).map(|i| 10.0 + i as f64));
        let f = build_relevance(&sizes, &default_percentile_grid()).unwrap();
        assert_eq!(f.control_xs()[0], 2.0);
        assert_eq!(f.control_ys()[0], 0.9);
        assert_eq!(*f.control_ys().last().unwrap(), 1.0);
    }

    #[test]
    fn degenerate_and_invalid_grids() {
        assert!(matches!(
            build_relevance(&[3.0; 10], &default_percentile_grid()),
            Err(Error::Degenerate(_))
        ));
        assert!(build_relevance(&[1.0, 2.0], &[50.0, 100.0]).is_err());
        assert!(build_relevance(&[1.0, 2.0], &[0.0, 1.0, 100.0]).is_err());
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relevance.csv");
        reference().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("size_mm,relevance\n0,0.1\n"));
    }

    fn control_set() -> impl Strategy<Value = RelevanceFunction> {
        prop::collection::vec((0.01f64..10.0, 0.0f64..0.3), 2..20).prop_map(|steps| {
            let mut x = 0.0;
            let mut y = 0.01;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (dx, dy) in steps {
                x += dx;
                y = (y + dy).min(1.0);
                xs.push(x);
                ys.push(y);
            }
            RelevanceFunction::from_control_points(xs, ys).unwrap()
        })
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(f in control_set(), a in -5.0f64..120.0, b in -5.0f64..120.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (va, vb) = (f.eval(lo), f.eval(hi));
            prop_assert!(va <= vb + 1e-12);
            let ys = f.control_ys();
            prop_assert!(va >= ys[0] - 1e-12 && vb <= ys[ys.len() - 1] + 1e-12);
        }

        #[test]
        fn no_overshoot(f in control_set(), t in 0.0f64..1.0, k in 0usize..19) {
            let xs = f.control_xs();
            let ys = f.control_ys();
            let k = k % (xs.len() - 1);
            let v = f.eval(xs[k] + t * (xs[k + 1] - xs[k]));
            prop_assert!(v >= ys[k] - 1e-12 && v <= ys[k + 1] + 1e-12);
        }

        #[test]
        fn built_function_spans_percentile_values(
            sizes in prop::collection::vec(1.0f64..80.0, 2..300)
        ) {
            prop_assume!(sizes.iter().any(|&s| s != sizes[0]));
            let f = build_relevance(&sizes, &default_percentile_grid()).unwrap();
            let max = sizes.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(f.eval(max), 1.0);
            prop_assert!(f.control_ys()[0] >= 0.01);
        }
    }
}
