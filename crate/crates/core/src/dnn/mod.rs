//! Distributional neural network for per-(cell, day) Weibull parameters.
//!
//! Fully connected layers, each followed by batch normalization, with Swish
//! hidden activations and a Softplus head emitting scale `C` and shape `w`.
//! All trainable parameters live in one flat vector so the optimizer and
//! the finite-difference checks can treat them uniformly.

mod io;
mod network;
mod train;

use serde::{Deserialize, Serialize};

pub use io::{read_model, read_training_log, write_model, write_training_log};
pub use network::{BatchStats, Gradient, Mode, NetworkState};
pub use train::{
    train, train_ensemble, EarlyStopping, EnsembleOutcome, EpochLog, TrainConfig, TrainOutcome,
    TrainStatus, TrainingTable,
};

/// Batch-norm variance offset.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the newest batch in the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden dense layers; the output layer comes on top, so the default
    /// of 5 gives six dense layers.
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Normalize the two output pre-activations as well. Off by default:
    /// batch statistics on the output pin the spread of the shape head and
    /// the fit stalls far from the optimum.
    pub batchnorm_on_output: bool,
    /// Multiplier on the scale head, `C = output_scale · softplus(z)`. Set it
    /// near `mean(y) / ln 2` so an untrained network starts at the sample
    /// mean instead of 0.69 mm.
    pub output_scale: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden_layers: 5,
            hidden_width: 32,
            batchnorm_on_output: false,
            output_scale: 1.0,
            seed: 0,
        }
    }

    /// Sets `output_scale` from the training targets.
    pub fn with_target_scale(mut self, targets: &[f64]) -> Self {
        if !targets.is_empty() {
            // sorted so the sum does not depend on row order
            let mut v = targets.to_vec();
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            if mean > 0.0 && mean.is_finite() {
                self.output_scale = mean / std::f64::consts::LN_2;
            }
        }
        self
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `z · sigmoid(z)`.
#[inline]
pub fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn swish_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

/// `ln(1 + e^z)`, floored at the smallest positive normal so outputs stay
/// strictly positive.
#[inline]
pub fn softplus(z: f64) -> f64 {
    let v = if z > 30.0 { z + (-z).exp() } else { z.exp().ln_1p() };
    v.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_identities() {
        assert_eq!(swish(0.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) > 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        for z in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let fd = (swish(z + 1e-6) - swish(z - 1e-6)) / 2e-6;
            assert!((fd - swish_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn target_scale() {
        let cfg = NetworkConfig::new(3).with_target_scale(&[10.0, 14.0]);
        assert!((cfg.output_scale * std::f64::consts::LN_2 - 12.0).abs() < 1e-12);
    }
}
