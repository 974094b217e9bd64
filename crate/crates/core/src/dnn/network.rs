//! Parameter layout, forward pass and reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{sigmoid, softplus, swish, swish_grad, NetworkConfig, BN_EPSILON, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::scaling::ScalingParams;
use crate::seeds;
use crate::weibull::{nll_with_grad, WeibullParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm; deterministic per row.
    Eval,
}

/// Offsets of one dense layer (and its batch norm) in the flat parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
    /// Offset of the batch-norm gain; the shift follows it.
    pub bn: Option<usize>,
}

pub(crate) fn layout(cfg: &NetworkConfig) -> (Vec<Layer>, usize) {
    let mut widths = vec![cfg.input_dim];
    widths.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
    widths.push(2);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    let mut off = 0;
    for (i, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = off;
        let b = w + n_in * n_out;
        off = b + n_out;
        let is_output = i == widths.len() - 2;
        let bn = if !is_output || cfg.batchnorm_on_output {
            let g = off;
            off += 2 * n_out;
            Some(g)
        } else {
            None
        };
        layers.push(Layer { n_in, n_out, w, b, bn });
    }
    (layers, off)
}

/// Running mean and variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradient of the loss with respect to the flat parameter vector.
pub type Gradient = Vec<f64>;

/// A network: configuration, trainable parameters, running batch-norm
/// statistics and the covariate scaling it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
    /// One entry per normalized layer, in layer order.
    pub running: Vec<BatchStats>,
    pub scaling: ScalingParams,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre: Array2<f64>,
}

struct ForwardPass {
    caches: Vec<LayerCache>,
    /// Pre-activation of the output layer, `B × 2`.
    out: Array2<f64>,
    stats: Vec<BatchStats>,
}

impl NetworkState {
    /// Fan-in scaled uniform initialization, `U(-1/√n_in, 1/√n_in)` for
    /// weights and biases; batch-norm gain 1 and shift 0.
    pub fn init(config: NetworkConfig, scaling: ScalingParams) -> Result<Self> {
        if config.input_dim == 0 || config.hidden_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(config.output_scale > 0.0 && config.output_scale.is_finite()) {
            return Err(Error::Config(format!(
                "output scale must be positive, got {}",
                config.output_scale
            )));
        }
        if scaling.dim() != config.input_dim {
            return Err(Error::Dimension {
                expected: config.input_dim,
                actual: scaling.dim(),
            });
        }
        let (layers, n) = layout(&config);
        let mut params = vec![0.0; n];
        let mut rng = seeds::rng_for(config.seed, seeds::tag::NET_INIT, 0);
        let mut running = Vec::new();
        for l in &layers {
            let limit = 1.0 / (l.n_in as f64).sqrt();
            for p in &mut params[l.w..l.b + l.n_out] {
                *p = rng.gen_range(-limit..limit);
            }
            if let Some(g) = l.bn {
                params[g..g + l.n_out].fill(1.0);
                running.push(BatchStats {
                    mean: vec![0.0; l.n_out],
                    var: vec![1.0; l.n_out],
                });
            }
        }
        Ok(NetworkState {
            config,
            params,
            running,
            scaling,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        layout(&self.config).0
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
            && self
                .running
                .iter()
                .all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                actual: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("network inputs must be finite".into()));
        }
        Ok(())
    }

    fn head(&self, z0: f64, z1: f64) -> WeibullParams {
        WeibullParams {
            scale: self.config.output_scale * softplus(z0),
            shape: softplus(z1),
        }
    }

    /// Weibull parameters for already scaled rows.
    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<Vec<WeibullParams>> {
        self.check_input(x)?;
        let out = match mode {
            Mode::Train => self.forward_train(&self.params, x).out,
            Mode::Eval => self.forward_eval(x),
        };
        Ok(out.outer_iter().map(|r| self.head(r[0], r[1])).collect())
    }

    /// Eval-mode parameters for one scaled covariate vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<WeibullParams> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(self.forward(view, Mode::Eval)?[0])
    }

    /// Scales raw covariate rows with the stored parameters, then predicts.
    pub fn predict(&self, raw: ArrayView2<'_, f64>) -> Result<Vec<WeibullParams>> {
        let scaled = self.scaling.apply(raw)?;
        self.forward(scaled.view(), Mode::Eval)
    }

    fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let layers = self.layers();
        let mut a = x.to_owned();
        let mut bn_index = 0;
        for (i, l) in layers.iter().enumerate() {
            let mut z = dense(&self.params, l, a.view());
            if let Some(g) = l.bn {
                let stats = &self.running[bn_index];
                bn_index += 1;
                let gamma = &self.params[g..g + l.n_out];
                let beta = &self.params[g + l.n_out..g + 2 * l.n_out];
                for mut row in z.outer_iter_mut() {
                    for j in 0..l.n_out {
                        let xhat = (row[j] - stats.mean[j]) / (stats.var[j] + BN_EPSILON).sqrt();
                        row[j] = gamma[j] * xhat + beta[j];
                    }
                }
            }
            if i + 1 < layers.len() {
                z.mapv_inplace(swish);
            }
            a = z;
        }
        a
    }

    fn forward_train(&self, params: &[f64], x: ArrayView2<'_, f64>) -> ForwardPass {
        let layers = self.layers();
        let batch = x.nrows() as f64;
        let mut caches = Vec::with_capacity(layers.len());
        let mut stats = Vec::new();
        let mut a = x.to_owned();
        for (i, l) in layers.iter().enumerate() {
            let z = dense(params, l, a.view());
            let (pre, xhat, inv_std) = match l.bn {
                Some(g) => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let xhat = &centered * &inv_std;
                    let gamma = ArrayView1::from(&params[g..g + l.n_out]);
                    let beta = ArrayView1::from(&params[g + l.n_out..g + 2 * l.n_out]);
                    let pre = &xhat * &gamma + &beta;
                    let unbiased = if batch > 1.0 { batch / (batch - 1.0) } else { 1.0 };
                    stats.push(BatchStats {
                        mean: mean.to_vec(),
                        var: var.iter().map(|v| v * unbiased).collect(),
                    });
                    (pre, xhat, inv_std)
                }
                None => (z, Array2::zeros((0, 0)), Array1::zeros(0)),
            };
            let next = if i + 1 < layers.len() {
                pre.mapv(swish)
            } else {
                pre.clone()
            };
            caches.push(LayerCache {
                input: a,
                xhat,
                inv_std,
                pre,
            });
            a = next;
        }
        ForwardPass {
            caches,
            out: a,
            stats,
        }
    }

    /// Train-mode weighted loss `(1/N) Σ aᵢ · (−ln f(yᵢ; Cᵢ, wᵢ))` at the
    /// given parameters, leaving running statistics untouched.
    pub fn loss_at(
        &self,
        params: &[f64],
        x: ArrayView2<'_, f64>,
        y: &[f64],
        weights: &[f64],
    ) -> Result<f64> {
        self.check_batch(x, y, weights)?;
        let pass = self.forward_train(params, x);
        Ok(self.weighted_nll(&pass.out, y, weights))
    }

    /// Train-mode loss at the current parameters.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<f64> {
        self.loss_at(&self.params, x, y, weights)
    }

    /// Eval-mode weighted loss, used for validation.
    pub fn eval_loss(&self, x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<f64> {
        self.check_batch(x, y, weights)?;
        let out = self.forward_eval(x);
        Ok(self.weighted_nll(&out, y, weights))
    }

    fn weighted_nll(&self, out: &Array2<f64>, y: &[f64], weights: &[f64]) -> f64 {
        let n = y.len() as f64;
        out.outer_iter()
            .zip(y.iter().zip(weights))
            .map(|(r, (&yi, &ai))| {
                if ai == 0.0 {
                    0.0
                } else {
                    ai * nll_with_grad(yi, self.head(r[0], r[1])).0
                }
            })
            .sum::<f64>()
            / n
    }

    fn check_batch(&self, x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<()> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        for len in [y.len(), weights.len()] {
            if len != x.nrows() {
                return Err(Error::Dimension {
                    expected: x.nrows(),
                    actual: len,
                });
            }
        }
        if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Invalid(format!("targets must be positive, found {v}")));
        }
        if let Some(v) = weights.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("weights must be non-negative, found {v}")));
        }
        Ok(())
    }

    /// Train-mode loss, its exact gradient and the batch statistics of
    /// every normalized layer.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        weights: &[f64],
    ) -> Result<(f64, Gradient, Vec<BatchStats>)> {
        self.check_batch(x, y, weights)?;
        let layers = self.layers();
        let pass = self.forward_train(&self.params, x);
        let n = y.len() as f64;
        let scale = self.config.output_scale;

        let mut loss = 0.0;
        let mut g = Array2::<f64>::zeros((y.len(), 2));
        for (i, r) in pass.out.outer_iter().enumerate() {
            let a = weights[i];
            if a == 0.0 {
                continue;
            }
            let (nll, d_c, d_w) = nll_with_grad(y[i], self.head(r[0], r[1]));
            loss += a * nll;
            g[[i, 0]] = a / n * d_c * scale * sigmoid(r[0]);
            g[[i, 1]] = a / n * d_w * sigmoid(r[1]);
        }
        loss /= n;

        let mut grad = vec![0.0; self.params.len()];
        for (i, (l, cache)) in layers.iter().zip(&pass.caches).enumerate().rev() {
            if i + 1 < layers.len() {
                g.zip_mut_with(&cache.pre, |gv, &p| *gv *= swish_grad(p));
            }
            let dz = match l.bn {
                Some(off) => {
                    let gamma = ArrayView1::from(&self.params[off..off + l.n_out]);
                    let d_gamma = (&g * &cache.xhat).sum_axis(Axis(0));
                    let d_beta = g.sum_axis(Axis(0));
                    grad[off..off + l.n_out].copy_from_slice(d_gamma.as_slice().unwrap());
                    grad[off + l.n_out..off + 2 * l.n_out]
                        .copy_from_slice(d_beta.as_slice().unwrap());
                    let dxhat = &g * &gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                    let b = n;
                    (&dxhat * b - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat))
                        * &(&cache.inv_std / b)
                }
                None => g,
            };
            let d_w = dz.t().dot(&cache.input);
            grad[l.w..l.b].copy_from_slice(d_w.as_standard_layout().as_slice().unwrap());
            let d_b = dz.sum_axis(Axis(0));
            grad[l.b..l.b + l.n_out].copy_from_slice(d_b.as_slice().unwrap());
            let w = weight_view(&self.params, l);
            g = dz.dot(&w);
        }
        Ok((loss, grad, pass.stats))
    }

    /// Exponential moving average update of the running statistics.
    pub fn update_running(&mut self, batch: &[BatchStats]) {
        for (run, b) in self.running.iter_mut().zip(batch) {
            for (r, v) in run.mean.iter_mut().zip(&b.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
            for (r, v) in run.var.iter_mut().zip(&b.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }
}

fn weight_view<'a>(params: &'a [f64], l: &Layer) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &params[l.w..l.b]).expect("layout")
}

fn dense(params: &[f64], l: &Layer, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut z = x.dot(&weight_view(params, l).t());
    z += &ArrayView1::from(&params[l.b..l.b + l.n_out]);
    z
}
