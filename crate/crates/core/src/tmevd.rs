//! Metastatistical annual-maximum distributions, return levels and periods,
//! ensemble bands and the empirical sampled baseline.
//!
//! A year with no hail days stays in the yearly average and contributes an
//! empty product of 1, so `F(0)` equals the fraction of such years rather
//! than zero.

use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::roots::{brent, BrentOptions};
use crate::seeds;
use crate::weibull::WeibullParams;

/// Default return-level horizons (years).
pub const DEFAULT_HORIZONS: [f64; 3] = [10.0, 20.0, 30.0];
/// Default sizes (mm) for return periods.
pub const DEFAULT_PERIOD_SIZES_MM: [f64; 3] = [30.0, 40.0, 50.0];
pub const DEFAULT_N_BOOT: usize = 1000;
/// Solver tolerance on `|F(x) - (1 - 1/T)|`.
pub const LEVEL_F_TOL: f64 = 1e-12;

/// One year of the sampled MEVD: shared parameters and `n` ordinary events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MevdYear {
    pub params: WeibullParams,
    pub n: u32,
}

/// `(1/T) Σ_j F(x; C_j, w_j)^{n_j}`.
pub fn mevd_cdf(x: f64, years: &[MevdYear]) -> Result<f64> {
    if years.is_empty() {
        return Err(Error::Invalid("MEVD needs at least one year".into()));
    }
    let sum: f64 = years
        .iter()
        .map(|y| {
            if y.n == 0 {
                1.0
            } else {
                (y.n as f64 * y.params.ln_cdf(x)).exp()
            }
        })
        .sum();
    Ok(sum / years.len() as f64)
}

/// Per-day Weibull parameters for every year of a cell's record.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParameterSeries {
    years: Vec<Vec<WeibullParams>>,
}

impl CellParameterSeries {
    /// `years[j]` holds the parameters of each hail day in year `j`.
    pub fn new(years: Vec<Vec<WeibullParams>>) -> Result<Self> {
        if years.is_empty() {
            return Err(Error::Invalid("parameter series needs at least one year".into()));
        }
        Ok(CellParameterSeries { years })
    }

    pub fn years(&self) -> &[Vec<WeibullParams>] {
        &self.years
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_days(&self) -> usize {
        self.years.iter().map(Vec::len).sum()
    }

    pub fn empty_year_fraction(&self) -> f64 {
        self.years.iter().filter(|y| y.is_empty()).count() as f64 / self.n_years() as f64
    }

    fn days(&self) -> impl Iterator<Item = &WeibullParams> {
        self.years.iter().flatten()
    }
}

/// `(1/T) Σ_j Π_{k∈A_j} F(x; C_jk, w_jk)`, with products taken in log space.
pub fn tmevd_cdf(x: f64, series: &CellParameterSeries) -> f64 {
    let sum: f64 = series
        .years
        .iter()
        .map(|days| days.iter().map(|p| p.ln_cdf(x)).sum::<f64>().exp())
        .sum();
    (sum / series.n_years() as f64).min(1.0)
}

/// Size exceeded on average once every `t_return` years.
///
/// Brackets the root of `F(x) = 1 - 1/T` on `[0, x_hi]`, where `x_hi`
/// starts at the largest per-day 99.99% quantile and doubles until
/// `F(x_hi)` exceeds the target, then refines with Brent's method. Returns
/// 0 when the share of years without hail days already reaches the target.
pub fn return_level(series: &CellParameterSeries, t_return: f64) -> Result<f64> {
    if !(t_return > 1.0 && t_return.is_finite()) {
        return Err(Error::Invalid(format!("return period must exceed 1 year, got {t_return}")));
    }
    if series.n_days() == 0 {
        return Err(Error::NoData);
    }
    let target = 1.0 - 1.0 / t_return;
    if series.empty_year_fraction() >= target {
        return Ok(0.0);
    }
    let mut hi = series
        .days()
        .map(|p| p.quantile(0.9999))
        .fold(0.0, f64::max);
    let mut doublings = 0;
    while tmevd_cdf(hi, series) <= target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 || !hi.is_finite() {
            return Err(Error::Root("could not bracket the return level".into()));
        }
    }
    brent(
        |x| tmevd_cdf(x, series) - target,
        0.0,
        hi,
        BrentOptions {
            f_tol: LEVEL_F_TOL,
            ..BrentOptions::default()
        },
    )
}

/// Mean recurrence interval `1 / (1 - F(size))` in years.
pub fn return_period(series: &CellParameterSeries, size_mm: f64) -> Result<f64> {
    if !(size_mm >= 0.0 && size_mm.is_finite()) {
        return Err(Error::Invalid(format!("size must be finite and >= 0, got {size_mm}")));
    }
    if series.n_days() == 0 {
        return Err(Error::NoData);
    }
    let exceed = 1.0 - tmevd_cdf(size_mm, series);
    if exceed <= 1e-15 {
        return Err(Error::InfinitePeriod);
    }
    Ok(1.0 / exceed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub two_std: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Member median and twice the standard deviation of `n_boot` bootstrap
/// medians. Non-finite members are treated as unavailable.
pub fn ensemble_summary<R: Rng>(members: &[f64], n_boot: usize, rng: &mut R) -> Result<Summary> {
    let values: Vec<f64> = members.iter().copied().filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return Err(Error::NoData);
    }
    let n = values.len();
    let mut medians = Vec::with_capacity(n_boot);
    let mut resample = vec![0.0; n];
    for _ in 0..n_boot {
        for slot in resample.iter_mut() {
            *slot = values[rng.gen_range(0..n)];
        }
        medians.push(median(&resample));
    }
    Ok(Summary {
        median: median(&values),
        two_std: 2.0 * std_dev(&medians),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellFlag {
    Ok,
    NoData,
    Infinite,
}

impl fmt::Display for CellFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellFlag::Ok => "ok",
            CellFlag::NoData => "no_data",
            CellFlag::Infinite => "infinite",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub cell_index: usize,
    /// Horizon in years, size in mm, or baseline window in years.
    pub key: f64,
    pub median: f64,
    pub two_std: f64,
    pub flag: CellFlag,
}

/// Per-cell summaries keyed by horizon or size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReturnLevelMap {
    pub entries: Vec<MapEntry>,
}

impl ReturnLevelMap {
    pub fn get(&self, cell_index: usize, key: f64) -> Option<&MapEntry> {
        self.entries
            .iter()
            .find(|e| e.cell_index == cell_index && e.key == key)
    }

    /// Medians for one key in cell order, NaN where unavailable.
    pub fn layer(&self, key: f64, n_cells: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; n_cells];
        for e in self.entries.iter().filter(|e| e.key == key) {
            if e.cell_index < n_cells && e.flag != CellFlag::NoData {
                out[e.cell_index] = e.median;
            }
        }
        out
    }

    /// Writes `cell_index,horizon_or_size,median,two_std,flag`; unavailable
    /// values are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_index", "horizon_or_size", "median", "two_std", "flag"])?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        for e in &self.entries {
            w.write_record([
                e.cell_index.to_string(),
                e.key.to_string(),
                fmt(e.median),
                fmt(e.two_std),
                e.flag.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Turns per-member results for one (cell, key) into a map entry.
pub fn summarize_members<R: Rng>(
    cell_index: usize,
    key: f64,
    members: &[Result<f64>],
    n_boot: usize,
    rng: &mut R,
) -> MapEntry {
    let finite: Vec<f64> = members
        .iter()
        .map(|r| match r {
            Ok(v) => *v,
            Err(Error::InfinitePeriod) => f64::INFINITY,
            Err(_) => f64::NAN,
        })
        .filter(|v| !v.is_nan())
        .collect();
    let unavailable = MapEntry {
        cell_index,
        key,
        median: f64::NAN,
        two_std: f64::NAN,
        flag: CellFlag::NoData,
    };
    if finite.is_empty() {
        return unavailable;
    }
    let med = median(&finite);
    if med.is_infinite() {
        return MapEntry {
            median: f64::INFINITY,
            flag: CellFlag::Infinite,
            ..unavailable
        };
    }
    match ensemble_summary(&finite, n_boot, rng) {
        Ok(s) => MapEntry {
            cell_index,
            key,
            median: s.median,
            two_std: s.two_std,
            flag: CellFlag::Ok,
        },
        Err(_) => unavailable,
    }
}

/// Empirical return-level baseline: maxima over random `window_years`-year
/// subsets of the record, drawn without replacement within each sample.
/// Cells without events get median 0 and the `no_data` flag.
pub fn sampled_baseline(
    ds: &Dataset,
    window_years: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ReturnLevelMap> {
    let years: Vec<i32> = ds.years().iter().collect();
    if window_years == 0 || window_years > years.len() {
        return Err(Error::Invalid(format!(
            "window of {window_years} years does not fit a {}-year record",
            years.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let n_cells = ds.grid().n_cells();
    let first = years[0];
    let mut yearly_max = vec![0.0f64; n_cells * years.len()];
    for e in ds.events() {
        let slot = &mut yearly_max[e.cell_index * years.len() + (e.date.year - first) as usize];
        *slot = slot.max(e.size_mm);
    }
    let mut rng = seeds::rng_for(seed, seeds::tag::BASELINE, 0);
    let draws: Vec<Vec<usize>> = (0..n_samples)
        .map(|_| index::sample(&mut rng, years.len(), window_years).into_vec())
        .collect();

    let counts = ds.hail_day_counts();
    let mut entries = Vec::with_capacity(n_cells);
    let mut maxima = vec![0.0; n_samples];
    for cell in 0..n_cells {
        let row = &yearly_max[cell * years.len()..(cell + 1) * years.len()];
        for (m, draw) in maxima.iter_mut().zip(&draws) {
            *m = draw.iter().map(|&j| row[j]).fold(0.0, f64::max);
        }
        entries.push(MapEntry {
            cell_index: cell,
            key: window_years as f64,
            median: median(&maxima),
            two_std: 2.0 * std_dev(&maxima),
            flag: if counts[cell] == 0 {
                CellFlag::NoData
            } else {
                CellFlag::Ok
            },
        });
    }
    Ok(ReturnLevelMap { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wp(c: f64, w: f64) -> WeibullParams {
        WeibullParams::new(c, w).unwrap()
    }

    #[test]
    fn mevd_worked_value() {
        let years = [
            MevdYear { params: wp(10.0, 1.0), n: 3 },
            MevdYear { params: wp(20.0, 2.0), n: 1 },
        ];
        let f = mevd_cdf(15.0, &years).unwrap();
        assert!((f - 0.449_539_451_694_568_55).abs() < 1e-14, "{f}");
        assert_eq!(mevd_cdf(0.0, &years).unwrap(), 0.0);
        assert!((mevd_cdf(1e6, &years).unwrap() - 1.0).abs() < 1e-15);
        assert!(mevd_cdf(1.0, &[]).is_err());
    }

    #[test]
    fn reduces_to_weibull_and_mevd() {
        let p = wp(12.541, 1.135);
        let s = CellParameterSeries::new(vec![vec![p]]).unwrap();
        assert_eq!(tmevd_cdf(p.scale, &s), p.cdf(p.scale));
        let years = vec![vec![p; 3], vec![], vec![wp(20.0, 2.0)]];
        let s = CellParameterSeries::new(years).unwrap();
        let m = [
            MevdYear { params: p, n: 3 },
            MevdYear { params: p, n: 0 },
            MevdYear { params: wp(20.0, 2.0), n: 1 },
        ];
        for x in [0.5, 5.0, 15.0, 40.0] {
            assert!((tmevd_cdf(x, &s) - mevd_cdf(x, &m).unwrap()).abs() < 1e-12);
        }
        assert!((tmevd_cdf(0.0, &s) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_years() {
        let s = CellParameterSeries::new(vec![vec![], vec![]]).unwrap();
        assert_eq!(tmevd_cdf(3.0, &s), 1.0);
        assert!(matches!(return_level(&s, 10.0), Err(Error::NoData)));
        assert!(matches!(return_period(&s, 30.0), Err(Error::NoData)));
    }

    #[test]
    fn closed_form_level() {
        let s = CellParameterSeries::new(vec![vec![wp(12.541, 1.135)]]).unwrap();
        let x = return_level(&s, 10.0).unwrap();
        assert!((x - 26.149_592_967_096_584).abs() < 1e-8, "{x}");
    }

    #[test]
    fn level_period_inverse() {
        let s = CellParameterSeries::new(vec![
            vec![wp(10.0, 1.1), wp(14.0, 0.9)],
            vec![],
            vec![wp(8.0, 1.4); 4],
        ])
        .unwrap();
        let mut last = 0.0;
        for t in [10.0, 20.0, 30.0] {
            let x = return_level(&s, t).unwrap();
            assert!(x >= last);
            last = x;
            let back = return_period(&s, x).unwrap();
            assert!((back / t - 1.0).abs() < 1e-6, "{t} {back}");
        }
        assert!((return_period(&s, 0.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn mostly_empty_record_gives_zero_level() {
        let mut years = vec![vec![]; 19];
        years.push(vec![wp(10.0, 1.0)]);
        let s = CellParameterSeries::new(years).unwrap();
        assert_eq!(return_level(&s, 10.0).unwrap(), 0.0);
        assert!(return_level(&s, 30.0).unwrap() > 0.0);
    }

    #[test]
    fn infinite_period() {
        let s = CellParameterSeries::new(vec![vec![wp(1.0, 5.0)]]).unwrap();
        assert!(matches!(return_period(&s, 100.0), Err(Error::InfinitePeriod)));
    }

    #[test]
    fn summaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = ensemble_summary(&[7.0; 50], 200, &mut rng).unwrap();
        assert_eq!((s.median, s.two_std), (7.0, 0.0));
        let s = ensemble_summary(&[10.0, 20.0], 2000, &mut rng).unwrap();
        assert_eq!(s.median, 15.0);
        assert!(s.two_std > 0.0);
        assert!(matches!(ensemble_summary(&[f64::NAN], 10, &mut rng), Err(Error::NoData)));
        let a = ensemble_summary(&[1.0, 5.0, 2.0], 10, &mut rng).unwrap().median;
        let b = ensemble_summary(&[5.0, 2.0, 1.0], 10, &mut rng).unwrap().median;
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_band_of_normal_members() {
        use rand_distr::{Distribution, Normal};
        // two-std of the sample median of 50 N(30, 2) draws ≈ 2·2·√(π/2)/√50
        let expected = 2.0 * 2.0 * (std::f64::consts::PI / 2.0).sqrt() / 50f64.sqrt();
        let d = Normal::new(30.0, 2.0).unwrap();
        let mut bands = Vec::new();
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let members: Vec<f64> = (0..50).map(|_| d.sample(&mut rng)).collect();
            bands.push(ensemble_summary(&members, 1000, &mut rng).unwrap().two_std);
        }
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        assert!((mean / expected - 1.0).abs() < 0.2, "{mean} vs {expected}");
    }

    #[test]
    fn member_summaries_carry_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = summarize_members(3, 10.0, &[Err(Error::NoData), Err(Error::NoData)], 10, &mut rng);
        assert_eq!(e.flag, CellFlag::NoData);
        assert!(e.median.is_nan());
        let e = summarize_members(3, 50.0, &[Err(Error::InfinitePeriod)], 10, &mut rng);
        assert_eq!(e.flag, CellFlag::Infinite);
        let e = summarize_members(3, 10.0, &[Ok(4.0), Ok(6.0), Err(Error::NoData)], 10, &mut rng);
        assert_eq!((e.median, e.flag), (5.0, CellFlag::Ok));
    }

    #[test]
    fn csv_layout() {
        let map = ReturnLevelMap {
            entries: vec![
                MapEntry { cell_index: 0, key: 10.0, median: 21.5, two_std: 0.5, flag: CellFlag::Ok },
                MapEntry {
                    cell_index: 1,
                    key: 10.0,
                    median: f64::NAN,
                    two_std: f64::NAN,
                    flag: CellFlag::NoData,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("levels.csv");
        map.write_csv(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "cell_index,horizon_or_size,median,two_std,flag\n0,10,21.5,0.5,ok\n1,10,,,no_data\n"
        );
        let layer = map.layer(10.0, 2);
        assert_eq!(layer[0], 21.5);
        assert!(layer[1].is_nan());
    }
}
