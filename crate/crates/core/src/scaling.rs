//! Per-column min-max scaling of covariate matrices onto `[0, 1]`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column minima and maxima captured at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ScalingParams {
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Identity scaling for `dim` columns.
    pub fn identity(dim: usize) -> Self {
        ScalingParams {
            mins: vec![0.0; dim],
            maxs: vec![1.0; dim],
        }
    }

    fn scale_value(&self, j: usize, v: f64) -> f64 {
        let span = self.maxs[j] - self.mins[j];
        if span > 0.0 {
            (v - self.mins[j]) / span
        } else {
            0.0
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &v)| self.scale_value(j, v))
            .collect())
    }

    /// Scales with stored parameters; values outside the training range
    /// map outside `[0, 1]` rather than being clipped.
    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: rows.ncols(),
            });
        }
        let mut out = rows.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.scale_value(j, v));
        }
        Ok(out)
    }
}

/// Fits and applies min-max scaling. Constant columns map to zero.
pub fn min_max_scale(rows: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ScalingParams)> {
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("min-max scaling needs finite values".into()));
    }
    let mut mins = Vec::with_capacity(rows.ncols());
    let mut maxs = Vec::with_capacity(rows.ncols());
    for col in rows.axis_iter(Axis(1)) {
        mins.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        maxs.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    if rows.nrows() == 0 {
        mins.fill(0.0);
        maxs.fill(1.0);
    }
    let params = ScalingParams { mins, maxs };
    Ok((params.apply(rows)?, params))
}
