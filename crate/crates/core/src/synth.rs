//! Synthetic climates with known ground truth.
//!
//! Each cell gets a hail-day rate `λ`, and each day a Weibull scale and
//! shape that vary smoothly with position and season. Hail days per year
//! are Poisson, placed on distinct days by a truncated-normal seasonal
//! weight, and sizes are Weibull draws rejected below 1 mm. Two covariates
//! are affine in the true `C` and `w`, so a regression model can in
//! principle recover both exactly; the rest are uniform noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    CovariateRow, CovariateSchema, Dataset, DatasetPaths, HailEventRecord, YearRange,
    HAIL_DAY_THRESHOLD_MM,
};
use crate::date::{days_in_year, DayDate};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::seeds;
use crate::weibull::WeibullParams;

/// `base + x_amp·(sx − ½) + y_amp·(sy − ½) + season_amp·cos(2π(doy − 180)/365.25)`
/// with `sx, sy ∈ [0, 1]` the normalized cell position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothField {
    pub base: f64,
    pub x_amp: f64,
    pub y_amp: f64,
    pub season_amp: f64,
}

impl Default for SmoothField {
    fn default() -> Self {
        SmoothField::constant(1.0)
    }
}

impl SmoothField {
    pub fn constant(v: f64) -> Self {
        SmoothField {
            base: v,
            x_amp: 0.0,
            y_amp: 0.0,
            season_amp: 0.0,
        }
    }

    pub fn value(&self, sx: f64, sy: f64, doy: u16) -> f64 {
        self.base
            + self.x_amp * (sx - 0.5)
            + self.y_amp * (sy - 0.5)
            + self.season_amp * (2.0 * PI * (f64::from(doy) - SEASON_CENTER_DOY) / 365.25).cos()
    }

    /// Lower and upper bounds over the unit square and the whole year.
    pub fn range(&self) -> (f64, f64) {
        let spread = 0.5 * self.x_amp.abs() + 0.5 * self.y_amp.abs() + self.season_amp.abs();
        (self.base - spread, self.base + spread)
    }
}

pub const SEASON_CENTER_DOY: f64 = 180.0;
pub const SEASON_SIGMA_DAYS: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub lon0: f64,
    pub lat0: f64,
    /// Hail days per year; the seasonal term is ignored.
    pub lambda: SmoothField,
    pub scale: SmoothField,
    pub shape: SmoothField,
    pub noise_covariates: usize,
    /// Round sizes to whole millimetres like the calibrated database.
    pub integer_mm: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_x: 20,
            n_y: 20,
            first_year: 1990,
            n_years: 30,
            lon0: 13.0,
            lat0: 47.5,
            lambda: SmoothField {
                base: 2.5,
                x_amp: 3.0,
                y_amp: 0.0,
                season_amp: 0.0,
            },
            scale: SmoothField {
                base: 12.5,
                x_amp: 2.0,
                y_amp: 2.0,
                season_amp: 0.5,
            },
            shape: SmoothField {
                base: 1.15,
                x_amp: 0.0,
                y_amp: 0.2,
                season_amp: 0.05,
            },
            noise_covariates: 2,
            integer_mm: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 || self.n_years == 0 {
            return Err(Error::Config("synthetic grid and record must be non-empty".into()));
        }
        let lambda = SmoothField {
            season_amp: 0.0,
            ..self.lambda
        };
        if lambda.range().0 < 0.0 {
            return Err(Error::Config("hail-day rate must be non-negative everywhere".into()));
        }
        if self.scale.range().0 <= 0.0 || self.shape.range().0 <= 0.0 {
            return Err(Error::Config("Weibull fields must be positive everywhere".into()));
        }
        Ok(())
    }

    pub fn years(&self) -> YearRange {
        YearRange {
            first: self.first_year,
            last: self.first_year + self.n_years as i32 - 1,
        }
    }

    pub fn schema(&self) -> CovariateSchema {
        let mut names: Vec<String> = ["lon", "lat", "year", "doy", "c_signal", "w_signal"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((0..self.noise_covariates).map(|i| format!("noise_{i}")));
        CovariateSchema::new(names).expect("static names")
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::regular(self.n_x, self.n_y, self.lon0, self.lat0, |_, iy| {
            300.0 + 400.0 * iy as f64 / self.n_y as f64
        })
    }

    fn position(&self, cell: usize) -> (f64, f64) {
        let (ix, iy) = (cell % self.n_x, cell / self.n_x);
        let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        (norm(ix, self.n_x), norm(iy, self.n_y))
    }

    pub fn lambda_at(&self, cell: usize) -> f64 {
        let (sx, sy) = self.position(cell);
        let l = SmoothField {
            season_amp: 0.0,
            ..self.lambda
        };
        l.value(sx, sy, 180).max(0.0)
    }

    pub fn params_at(&self, cell: usize, doy: u16) -> WeibullParams {
        let (sx, sy) = self.position(cell);
        WeibullParams {
            scale: self.scale.value(sx, sy, doy),
            shape: self.shape.value(sx, sy, doy),
        }
    }
}

/// Seasonal day-of-year sampler for one year length.
struct SeasonSampler {
    index_365: WeightedIndex<f64>,
    index_366: WeightedIndex<f64>,
}

impl SeasonSampler {
    fn new() -> Self {
        let weights = |n: u16| {
            (1..=n)
                .map(|d| {
                    let z = (f64::from(d) - SEASON_CENTER_DOY) / SEASON_SIGMA_DAYS;
                    (-0.5 * z * z).exp()
                })
                .collect::<Vec<f64>>()
        };
        SeasonSampler {
            index_365: WeightedIndex::new(weights(365)).expect("positive weights"),
            index_366: WeightedIndex::new(weights(366)).expect("positive weights"),
        }
    }

    /// `n` distinct days of `year`, ascending.
    fn days(&self, rng: &mut ChaCha8Rng, year_len: u16, n: usize, out: &mut Vec<u16>) {
        out.clear();
        let idx = if year_len == 366 { &self.index_366 } else { &self.index_365 };
        let n = n.min(usize::from(year_len));
        while out.len() < n {
            let d = idx.sample(rng) as u16 + 1;
            if !out.contains(&d) {
                out.push(d);
            }
        }
        out.sort_unstable();
    }
}

fn draw_size(rng: &mut ChaCha8Rng, p: WeibullParams, integer_mm: bool) -> f64 {
    loop {
        let u: f64 = rng.gen();
        // inverse CDF on 1 − u ∈ (0, 1]
        let x = p.scale * (-(1.0 - u).ln()).powf(1.0 / p.shape);
        let x = if integer_mm { x.round() } else { x };
        if x >= HAIL_DAY_THRESHOLD_MM {
            return x;
        }
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("positive rate").sample(rng) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub cell_index: usize,
    pub date: DayDate,
    pub params: WeibullParams,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// True parameters of every generated hail day.
    pub truth: Vec<TruthRow>,
    /// Hail-day rate per cell.
    pub lambdas: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let schema = cfg.schema();
    let sampler = SeasonSampler::new();
    let (c_lo, c_hi) = cfg.scale.range();
    let (w_lo, w_hi) = cfg.shape.range();
    let signal = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };

    let mut events = Vec::new();
    let mut covariates = Vec::new();
    let mut truth = Vec::new();
    let mut lambdas = Vec::with_capacity(grid.n_cells());
    let mut days = Vec::new();
    for cell in 0..grid.n_cells() {
        let lambda = cfg.lambda_at(cell);
        lambdas.push(lambda);
        let point = *grid.cell(cell).expect("cell in grid");
        let mut rng = seeds::rng_for(cfg.seed, seeds::tag::SYNTH_CELL, cell as u64);
        for year in cfg.years().iter() {
            let n = poisson_count(&mut rng, lambda);
            sampler.days(&mut rng, days_in_year(year), n, &mut days);
            for &doy in &days {
                let p = cfg.params_at(cell, doy);
                let size = draw_size(&mut rng, p, cfg.integer_mm);
                let date = DayDate::new(year, doy)?;
                let mut values = vec![
                    point.lon,
                    point.lat,
                    f64::from(year),
                    f64::from(doy),
                    signal(p.scale, c_lo, c_hi),
                    signal(p.shape, w_lo, w_hi),
                ];
                values.extend((0..cfg.noise_covariates).map(|_| rng.gen::<f64>()));
                events.push(HailEventRecord {
                    cell_index: cell,
                    date,
                    size_mm: size,
                });
                covariates.push(CovariateRow {
                    cell_index: cell,
                    date,
                    values,
                });
                truth.push(TruthRow {
                    cell_index: cell,
                    date,
                    params: p,
                });
            }
        }
    }
    let dataset = Dataset::new(grid, schema, events, covariates, Some(cfg.years()))?;
    Ok(SynthOutput {
        dataset,
        truth,
        lambdas,
    })
}

/// Monte Carlo return level with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueLevel {
    pub level: f64,
    pub std_error: f64,
}

/// Simulated annual maxima at `cell` (0 for years without hail days).
pub fn simulate_annual_maxima(cfg: &SynthConfig, cell: usize, n_years: usize, seed_index: u64) -> Vec<f64> {
    let sampler = SeasonSampler::new();
    let lambda = cfg.lambda_at(cell);
    let mut rng = seeds::rng_for(
        seeds::derive_seed(cfg.seed, seeds::tag::SYNTH_TRUTH, cell as u64),
        seeds::tag::SYNTH_TRUTH,
        seed_index,
    );
    let mut days = Vec::new();
    let mut out = Vec::with_capacity(n_years);
    for y in 0..n_years {
        let n = poisson_count(&mut rng, lambda);
        // leap-year pattern of an ordinary calendar
        let year_len = if y % 4 == 0 { 366 } else { 365 };
        sampler.days(&mut rng, year_len, n, &mut days);
        let max = days
            .iter()
            .map(|&doy| draw_size(&mut rng, cfg.params_at(cell, doy), cfg.integer_mm))
            .fold(0.0, f64::max);
        out.push(max);
    }
    out
}

/// Empirical `T`-year level from `n_years` simulated years at `cell`.
///
/// The standard error comes from the binomial spread of the order statistic:
/// half the distance between the order statistics one binomial standard
/// deviation below and above the target rank.
pub fn true_return_level(cfg: &SynthConfig, cell: usize, t_return: f64, n_years: usize) -> Result<TrueLevel> {
    cfg.validate()?;
    if !(t_return > 1.0) || n_years < 10 {
        return Err(Error::Invalid("need T > 1 and at least 10 simulated years".into()));
    }
    let mut maxima = simulate_annual_maxima(cfg, cell, n_years, 0);
    maxima.sort_by(f64::total_cmp);
    Ok(level_from_sorted(&maxima, t_return))
}

/// Quantile `1 − 1/T` of sorted annual maxima with its binomial error.
pub fn level_from_sorted(sorted: &[f64], t_return: f64) -> TrueLevel {
    let n = sorted.len() as f64;
    let p = 1.0 - 1.0 / t_return;
    let at = |r: f64| sorted[(r.ceil() as usize).clamp(1, sorted.len()) - 1];
    let sd = (n * p * (1.0 - p)).sqrt();
    TrueLevel {
        level: at(n * p),
        std_error: 0.5 * (at(n * p + sd) - at(n * p - sd)),
    }
}

/// Annual-maximum CDF for constant parameters and Poisson(λ) hail days,
/// `exp(−λ(1 − F₁(x)))` with `F₁` the Weibull CDF truncated at 1 mm.
pub fn poisson_mixture_cdf(x: f64, lambda: f64, p: WeibullParams) -> f64 {
    let f1 = p.cdf(HAIL_DAY_THRESHOLD_MM);
    let ft = if x < HAIL_DAY_THRESHOLD_MM {
        0.0
    } else {
        (p.cdf(x) - f1) / (1.0 - f1)
    };
    (-lambda * (1.0 - ft)).exp()
}

/// Writes the dataset CSVs plus `truth_params.csv` and `truth_cells.csv`
/// into `dir`.
pub fn write_synth(out: &SynthOutput, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths {
        grid: dir.join("grid.csv"),
        events: dir.join("events.csv"),
        covariates: dir.join("covariates.csv"),
    };
    out.dataset.write(&paths)?;

    let path = dir.join("truth_params.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell_index", "date", "scale_c", "shape_w"])?;
    for t in &out.truth {
        w.write_record([
            t.cell_index.to_string(),
            t.date.to_string(),
            t.params.scale.to_string(),
            t.params.shape.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("truth_cells.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell_index", "lambda"])?;
    for (i, l) in out.lambdas.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(paths)
}
