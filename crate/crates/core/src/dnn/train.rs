//! Mini-batch Adam training with early stopping, and seeded ensembles.

use std::cmp::Ordering;

use log::{info, warn};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::NetworkState;
use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::scaling::ScalingParams;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 4096,
            max_epochs: 500,
            patience: 20,
            min_delta: 0.0,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || self.max_epochs == 0 {
            return Err(Error::Config("learning rate and max epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Scaled covariates with targets and sample weights.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    /// Scaling that produced `x`, stored with the trained model.
    pub scaling: ScalingParams,
}

impl TrainingTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() || self.weights.len() != self.y.len() {
            return Err(Error::Dimension {
                expected: self.y.len(),
                actual: self.x.nrows().min(self.weights.len()),
            });
        }
        if self.len() < 2 {
            return Err(Error::Invalid("training needs at least two rows".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite covariate in training table".into()));
        }
        Ok(())
    }

    /// Row order sorted by content, so training is independent of the order
    /// rows were supplied in.
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.y[a]
                .total_cmp(&self.y[b])
                .then(self.weights[a].total_cmp(&self.weights[b]))
                .then_with(|| {
                    self.x
                        .row(a)
                        .iter()
                        .zip(self.x.row(b))
                        .map(|(p, q)| p.total_cmp(q))
                        .find(|o| *o != Ordering::Equal)
                        .unwrap_or(Ordering::Equal)
                })
        });
        idx
    }
}

/// Tracks the best validation loss and the epochs since it improved.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records one epoch; returns `true` if it set a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    EarlyStopped,
    MaxEpochs,
    /// A non-finite loss or parameter appeared in this epoch; the returned
    /// state is the best snapshot before it.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub log: Vec<EpochLog>,
    pub status: TrainStatus,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Splits positions `0..n` (ordered by target) into train and validation
/// sets, drawing the validation share separately from each size quintile.
fn stratified_split(order_by_y: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = order_by_y.len();
    let mut rng = seeds::rng_for(seed, seeds::tag::TRAIN_SPLIT, 0);
    let mut train = Vec::with_capacity(n);
    let mut val = Vec::new();
    for q in 0..5 {
        let mut group: Vec<usize> = order_by_y[q * n / 5..(q + 1) * n / 5].to_vec();
        group.shuffle(&mut rng);
        let k = (group.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&group[..k]);
        train.extend_from_slice(&group[k..]);
    }
    if val.is_empty() {
        val.push(train.pop().expect("at least two rows"));
    }
    if train.is_empty() {
        train.push(val.pop().expect("at least two rows"));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn batches(indices: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = indices.chunks(batch_size).collect();
    if out.len() > 1 && out[out.len() - 1].len() < 2 {
        // a single-row batch has no batch statistics; fold it into the previous one
        let last = out.pop().unwrap().len();
        let prev = out.pop().unwrap().len();
        let start = indices.len() - last - prev;
        out.push(&indices[start..]);
    }
    out
}

/// Trains one network. Returns the snapshot with the lowest validation loss.
pub fn train(table: &TrainingTable, cfg: &TrainConfig, net_cfg: &NetworkConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    table.validate()?;
    let mut net = NetworkState::init(net_cfg.clone(), table.scaling.clone())?;
    if table.x.ncols() != net_cfg.input_dim {
        return Err(Error::Dimension {
            expected: net_cfg.input_dim,
            actual: table.x.ncols(),
        });
    }

    let order = table.canonical_order();
    let x = table.x.select(Axis(0), &order);
    let y: Vec<f64> = order.iter().map(|&i| table.y[i]).collect();
    let a: Vec<f64> = order.iter().map(|&i| table.weights[i]).collect();
    let (train_idx, val_idx) = stratified_split(
        &(0..order.len()).collect::<Vec<_>>(),
        cfg.validation_fraction,
        cfg.seed,
    );
    let x_val = x.select(Axis(0), &val_idx);
    let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
    let a_val: Vec<f64> = val_idx.iter().map(|&i| a[i]).collect();

    let mut rng = seeds::rng_for(cfg.seed, seeds::tag::TRAIN_SHUFFLE, 0);
    let mut adam = Adam::new(net.n_params());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = net.clone();
    let mut log = Vec::new();
    let mut shuffled = train_idx.clone();
    let mut status = TrainStatus::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        shuffled.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&shuffled, cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let ab: Vec<f64> = batch.iter().map(|&i| a[i]).collect();
            let (loss, grad, stats) = net.loss_and_grad(xb.view(), &yb, &ab)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                status = TrainStatus::Diverged { epoch };
                break 'epochs;
            }
            adam.step(&mut net.params, &grad, cfg);
            net.update_running(&stats);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / shuffled.len() as f64;
        let val_loss = net.eval_loss(x_val.view(), &y_val, &a_val)?;
        if !val_loss.is_finite() || !net.is_finite() {
            status = TrainStatus::Diverged { epoch };
            break;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best = net.clone();
        }
        if stopper.should_stop() {
            status = TrainStatus::EarlyStopped;
            break;
        }
    }
    if let TrainStatus::Diverged { epoch } = status {
        warn!("training diverged at epoch {epoch}; keeping epoch {}", stopper.best_epoch);
    }
    Ok(TrainOutcome {
        state: best,
        log,
        status,
        best_epoch: stopper.best_epoch,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    /// Successful members in member order.
    pub members: Vec<TrainOutcome>,
    /// Indices of members that diverged or failed.
    pub failed: Vec<(usize, String)>,
}

/// Minimum share of members that must train successfully.
pub const ENSEMBLE_MIN_SUCCESS: f64 = 0.8;

/// Trains `n_models` networks that differ only in their seed
/// (`derive_seed(base, ENSEMBLE_MEMBER, i)` for member `i`).
pub fn train_ensemble(
    table: &TrainingTable,
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    n_models: usize,
) -> Result<EnsembleOutcome> {
    if n_models == 0 {
        return Err(Error::Config("ensemble needs at least one model".into()));
    }
    let results: Vec<(usize, Result<TrainOutcome>)> = (0..n_models)
        .into_par_iter()
        .map(|i| {
            let seed = seeds::derive_seed(cfg.seed, seeds::tag::ENSEMBLE_MEMBER, i as u64);
            let member_cfg = TrainConfig { seed, ..cfg.clone() };
            let member_net = NetworkConfig { seed, ..net_cfg.clone() };
            (i, train(table, &member_cfg, &member_net))
        })
        .collect();

    let mut members = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results {
        match r {
            Ok(o) if !matches!(o.status, TrainStatus::Diverged { .. }) => members.push(o),
            Ok(o) => failed.push((i, format!("{:?}", o.status))),
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    for (i, why) in &failed {
        warn!("ensemble member {i} failed: {why}");
    }
    if (members.len() as f64) < ENSEMBLE_MIN_SUCCESS * n_models as f64 {
        return Err(Error::Diverged(format!(
            "only {} of {n_models} ensemble members trained successfully",
            members.len()
        )));
    }
    info!("trained {} of {n_models} ensemble members", members.len());
    Ok(EnsembleOutcome { members, failed })
}
