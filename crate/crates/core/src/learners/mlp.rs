//! One-hidden-layer ReLU regressor trained with Adam and early stopping.
//!
//! Inputs and the target are standardized on the training split. A random
//! share of the training rows is held out for early stopping and the weights
//! with the best held-out loss are restored at the end.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{select_entries, select_rows, Standardization};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub width: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Rows per Adam step; `None` uses the whole training split.
    pub batch_size: Option<usize>,
    pub validation_fraction: f64,
    /// Minimum decrease of the held-out loss that resets patience.
    pub tolerance: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            width: 100,
            max_epochs: 400,
            patience: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: None,
            validation_fraction: 0.1,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub validation_curve: Vec<f64>,
    pub params: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub standardization: Standardization,
    pub y_mean: f64,
    pub y_scale: f64,
    /// `p × width` weights on standardized inputs.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

/// Gradient of the mean squared error with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl MlpGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().copied().collect();
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        v
    }
}

impl MlpModel {
    fn init(p: usize, width: usize, rng: &mut impl Rng) -> Self {
        // Glorot-uniform bounds per layer.
        let bound1 = (6.0 / (p + width) as f64).sqrt();
        let bound2 = (6.0 / (width + 1) as f64).sqrt();
        let w1 = DMatrix::from_fn(p, width, |_, _| rng.random_range(-bound1..bound1));
        let b1 = DVector::from_fn(width, |_, _| rng.random_range(-bound1..bound1));
        let w2 = DVector::from_fn(width, |_, _| rng.random_range(-bound2..bound2));
        let b2 = rng.random_range(-bound2..bound2);
        Self {
            standardization: Standardization {
                means: vec![0.0; p],
                sds: vec![1.0; p],
                constant: vec![false; p],
            },
            y_mean: 0.0,
            y_scale: 1.0,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn width(&self) -> usize {
        self.w1.ncols()
    }

    /// Hidden pre-activations for standardized inputs.
    fn hidden(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = z * &self.w1;
        for mut row in h.row_iter_mut() {
            row += self.b1.transpose();
        }
        h
    }

    /// Standardized-scale output for standardized inputs.
    pub fn forward_standardized(&self, z: &DMatrix<f64>) -> DVector<f64> {
        let a = self.hidden(z).map(|v| v.max(0.0));
        (a * &self.w2).add_scalar(self.b2)
    }

    /// Mean squared error on standardized data and its gradient.
    pub fn loss_and_gradient(&self, z: &DMatrix<f64>, t: &DVector<f64>) -> (f64, MlpGradient) {
        let n = z.nrows() as f64;
        let h = self.hidden(z);
        let a = h.map(|v| v.max(0.0));
        let out = (&a * &self.w2).add_scalar(self.b2);
        let diff = out - t;
        let loss = diff.norm_squared() / n;
        let delta = diff * (2.0 / n);
        let gw2 = a.transpose() * &delta;
        let gb2 = delta.sum();
        let mut dh = &delta * self.w2.transpose();
        dh.zip_apply(&h, |g, pre| {
            if pre <= 0.0 {
                *g = 0.0
            }
        });
        let gw1 = z.transpose() * &dh;
        let gb1 = DVector::from_iterator(dh.ncols(), dh.column_iter().map(|c| c.sum()));
        (
            loss,
            MlpGradient {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        )
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().copied().collect();
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let (p, h) = self.w1.shape();
        assert_eq!(flat.len(), p * h + 2 * h + 1, "parameter vector length");
        self.w1.copy_from_slice(&flat[..p * h]);
        self.b1.copy_from_slice(&flat[p * h..p * h + h]);
        self.w2.copy_from_slice(&flat[p * h + h..p * h + 2 * h]);
        self.b2 = flat[p * h + 2 * h];
    }

    /// First layer mapped to raw inputs: `(weights p × width, bias)`.
    pub fn raw_first_layer(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut w = self.w1.clone();
        let mut b = self.b1.clone();
        for (j, mut row) in w.row_iter_mut().enumerate() {
            row *= self.standardization.scale(j);
            b -= row.transpose() * self.standardization.means[j];
        }
        (w, b)
    }

    /// Output for hidden pre-activations `h` computed on raw inputs.
    pub fn output_from_hidden(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let a = h.map(|v| v.max(0.0));
        (a * &self.w2)
            .add_scalar(self.b2)
            .map(|v| self.y_mean + self.y_scale * v)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let z = self.standardization.apply(x);
        self.forward_standardized(&z)
            .map(|v| self.y_mean + self.y_scale * v)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &MlpParams) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains the network on `(x, y)`.
pub fn fit_mlp(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &MlpParams,
    rng: &RngStream,
) -> Result<(MlpModel, MlpReport)> {
    let n = x.nrows();
    if n != y.len() {
        return invalid(format!("{n} rows vs {} targets", y.len()));
    }
    if n < 20 {
        return invalid(format!("MLP training needs at least 20 samples, got {n}"));
    }
    if params.width == 0 {
        return invalid("hidden width must be at least 1");
    }
    if !(params.validation_fraction > 0.0 && params.validation_fraction < 0.5) {
        return invalid("validation fraction must lie in (0, 0.5)");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.derive(0).rng());
    let n_val = ((n as f64 * params.validation_fraction).round() as usize).max(1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (xt, yt) = (select_rows(x, train_idx), select_entries(y, train_idx));
    let (xv, yv) = (select_rows(x, val_idx), select_entries(y, val_idx));

    let standardization = Standardization::fit(&xt);
    let zt = standardization.apply(&xt);
    let zv = standardization.apply(&xv);
    let y_mean = yt.mean();
    let y_sd = (yt.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / (yt.len() - 1) as f64).sqrt();
    let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };
    let tt = yt.map(|v| (v - y_mean) / y_scale);
    let tv = yv.map(|v| (v - y_mean) / y_scale);

    let mut model = MlpModel::init(x.ncols(), params.width, &mut rng.derive(1).rng());
    model.standardization = standardization;
    model.y_mean = y_mean;
    model.y_scale = y_scale;

    let mut flat = model.params();
    let mut adam = Adam::new(flat.len());
    let mut batch_rng = rng.derive(2).rng();
    let batch = params.batch_size.unwrap_or(zt.nrows()).clamp(1, zt.nrows());
    let mut rows: Vec<usize> = (0..zt.nrows()).collect();

    let mut best = (f64::INFINITY, flat.clone(), 0usize);
    let mut curve = Vec::new();
    let mut stale = 0usize;
    let mut epochs_run = 0;
    for epoch in 0..params.max_epochs {
        epochs_run = epoch + 1;
        if batch < zt.nrows() {
            rows.shuffle(&mut batch_rng);
        }
        for chunk in rows.chunks(batch) {
            let (grad, loss) = if batch == zt.nrows() {
                let (loss, g) = model.loss_and_gradient(&zt, &tt);
                (g, loss)
            } else {
                let zb = select_rows(&zt, chunk);
                let tb = select_entries(&tt, chunk);
                let (loss, g) = model.loss_and_gradient(&zb, &tb);
                (g, loss)
            };
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut flat, &grad.flatten(), params);
            model.set_params(&flat);
        }
        let val = (model.forward_standardized(&zv) - &tv).norm_squared() / tv.len() as f64;
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        curve.push(val);
        if val < best.0 - params.tolerance {
            best = (val, flat.clone(), epoch);
            stale = 0;
        } else {
            if val < best.0 {
                best = (val, flat.clone(), best.2);
            }
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }
    model.set_params(&best.1);
    let report = MlpReport {
        epochs_run,
        best_epoch: best.2,
        best_validation_loss: best.0,
        validation_curve: curve,
        params: params.clone(),
    };
    Ok((model, report))
}
