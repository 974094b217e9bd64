//! Glue between the dataset, the network ensemble and the TMEVD solvers.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dnn::{NetworkState, TrainingTable};
use crate::error::{Error, Result};
use crate::ordinary::dither;
use crate::relevance::{build_relevance, RelevanceFunction};
use crate::scaling::min_max_scale;
use crate::seeds;
use crate::tmevd::{
    return_level, return_period, summarize_members, CellParameterSeries, ReturnLevelMap,
};
use crate::weibull::WeibullParams;

/// Raw covariates of every event, in `ds.events()` order.
pub fn event_covariates(ds: &Dataset) -> Array2<f64> {
    let d = ds.schema().len();
    let mut x = Array2::zeros((ds.events().len(), d));
    for (mut row, e) in x.outer_iter_mut().zip(ds.events()) {
        let values = ds
            .covariates(e.cell_index, e.date)
            .expect("dataset guarantees a covariate row per event");
        row.assign(&ndarray::ArrayView1::from(values));
    }
    x
}

/// Per-event weights in the training loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleWeighting {
    /// Relevance of the dithered size.
    #[default]
    Relevance,
    /// Plain likelihood, for ablation. The relevance-weighted fit targets a
    /// size distribution tilted toward large stones, this one the sizes
    /// themselves.
    Uniform,
}

/// Training table with dithered targets, sample weights, and min-max scaled
/// covariates. The relevance function is computed on the dithered targets
/// whichever weighting is chosen.
pub fn build_training_table(
    ds: &Dataset,
    dither_seed: u64,
    percentile_grid: &[f64],
    weighting: SampleWeighting,
) -> Result<(TrainingTable, RelevanceFunction)> {
    if ds.events().is_empty() {
        return Err(Error::Invalid("dataset has no events to train on".into()));
    }
    let sizes: Vec<f64> = ds.events().iter().map(|e| e.size_mm).collect();
    let y = dither(&sizes, dither_seed);
    let relevance = build_relevance(&y, percentile_grid)?;
    let weights = match weighting {
        SampleWeighting::Relevance => y.iter().map(|&v| relevance.eval(v)).collect(),
        SampleWeighting::Uniform => vec![1.0; y.len()],
    };
    let (x, scaling) = min_max_scale(event_covariates(ds).view())?;
    Ok((
        TrainingTable {
            x,
            y,
            weights,
            scaling,
        },
        relevance,
    ))
}

/// Eval-mode parameters of every event, in `ds.events()` order.
pub fn predict_events(ds: &Dataset, net: &NetworkState) -> Result<Vec<WeibullParams>> {
    if net.config.input_dim != ds.schema().len() {
        return Err(Error::Dimension {
            expected: net.config.input_dim,
            actual: ds.schema().len(),
        });
    }
    if ds.events().is_empty() {
        return Ok(Vec::new());
    }
    net.predict(event_covariates(ds).view())
}

/// Groups per-event parameters (aligned with `ds.events()`) into one
/// series per cell spanning the full record.
pub fn cell_series(ds: &Dataset, params: &[WeibullParams]) -> Result<Vec<CellParameterSeries>> {
    if params.len() != ds.events().len() {
        return Err(Error::Dimension {
            expected: ds.events().len(),
            actual: params.len(),
        });
    }
    let years = ds.years();
    let mut per_cell = vec![vec![Vec::new(); years.len()]; ds.grid().n_cells()];
    for (e, p) in ds.events().iter().zip(params) {
        per_cell[e.cell_index][(e.date.year - years.first) as usize].push(*p);
    }
    per_cell.into_iter().map(CellParameterSeries::new).collect()
}

/// Per-member, per-cell parameter series.
pub fn ensemble_series(ds: &Dataset, models: &[NetworkState]) -> Result<Vec<Vec<CellParameterSeries>>> {
    models
        .iter()
        .map(|m| cell_series(ds, &predict_events(ds, m)?))
        .collect()
}

fn summarize_map<F>(
    members: &[Vec<CellParameterSeries>],
    keys: &[f64],
    n_boot: usize,
    seed: u64,
    eval: F,
) -> Result<ReturnLevelMap>
where
    F: Fn(&CellParameterSeries, f64) -> Result<f64> + Sync,
{
    let n_cells = members.first().map_or(0, Vec::len);
    if members.iter().any(|m| m.len() != n_cells) {
        return Err(Error::Invalid("ensemble members disagree on the cell count".into()));
    }
    let entries = (0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let mut rng = seeds::rng_for(seed, seeds::tag::BOOTSTRAP, cell as u64);
            keys.iter()
                .map(|&k| {
                    let values: Vec<Result<f64>> =
                        members.iter().map(|m| eval(&m[cell], k)).collect();
                    summarize_members(cell, k, &values, n_boot, &mut rng)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(ReturnLevelMap { entries })
}

/// Ensemble-median return levels (mm) with bootstrap bands for each horizon.
pub fn return_level_map(
    members: &[Vec<CellParameterSeries>],
    horizons: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<ReturnLevelMap> {
    summarize_map(members, horizons, n_boot, seed, return_level)
}

/// Ensemble-median return periods (years) for each size.
pub fn return_period_map(
    members: &[Vec<CellParameterSeries>],
    sizes_mm: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<ReturnLevelMap> {
    summarize_map(members, sizes_mm, n_boot, seed, return_period)
}
