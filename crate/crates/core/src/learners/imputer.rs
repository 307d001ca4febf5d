//! Conditional-mean imputers `E[X_G | X_{-G}]` fitted by multi-output ridge.
//!
//! For one training split every group shares the same standardized design
//! `Z` and Gram matrix `S = ZᵀZ`. With `Θ = (S + λI)⁻¹`, the ridge
//! coefficients of `Z_G` on `Z_{-G}` are the block
//!
//! ```text
//! B = (S_{-G,-G} + λI)⁻¹ S_{-G,G} = -Θ_{-G,G} Θ_{G,G}⁻¹
//! ```
//!
//! so a group only needs a `|G| × |G|` factorization once `Θ` is known. The
//! penalty is chosen per group by exact leave-one-out error, whose hat
//! diagonal is obtained from the same blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ridge::{default_lambda_grid, LAMBDA_FLOOR};
use super::CvCurve;
use crate::data::{select_columns, Standardization};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ImputerModel {
    /// `x̂_G = x_{-G} · coef + offset`, coef is `|rest| × |G|`.
    Conditional {
        coef: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// No conditioning set: predicts the training means.
    Marginal { means: DVector<f64> },
}

/// Fitted conditional-mean model for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    group: Vec<usize>,
    rest: Vec<usize>,
    p: usize,
    model: ImputerModel,
    lambda: Option<f64>,
    cv: Option<CvCurve>,
    train_residuals: DMatrix<f64>,
}

impl Imputer {
    /// Degenerate imputer used when the group holds every variable.
    pub fn marginal(x_train: &DMatrix<f64>, group: &[usize]) -> Result<Self> {
        let p = x_train.ncols();
        validate_group(group, p, true)?;
        let xg = select_columns(x_train, group);
        let means = DVector::from_iterator(group.len(), xg.column_iter().map(|c| c.mean()));
        let mut resid = xg;
        for (j, mut c) in resid.column_iter_mut().enumerate() {
            c.add_scalar_mut(-means[j]);
        }
        Ok(Self {
            group: group.to_vec(),
            rest: complement(group, p),
            p,
            model: ImputerModel::Marginal { means },
            lambda: None,
            cv: None,
            train_residuals: resid,
        })
    }

    pub fn group(&self) -> &[usize] {
        &self.group
    }

    pub fn rest(&self) -> &[usize] {
        &self.rest
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn cv_curve(&self) -> Option<&CvCurve> {
        self.cv.as_ref()
    }

    pub fn is_marginal(&self) -> bool {
        matches!(self.model, ImputerModel::Marginal { .. })
    }

    /// Observed minus predicted on the training split (`n_train × |G|`).
    pub fn train_residuals(&self) -> &DMatrix<f64> {
        &self.train_residuals
    }

    /// Predicted `X_G` for each row of a full `n × p` matrix.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p {
            return invalid(format!("imputer expects {} columns, got {}", self.p, x.ncols()));
        }
        Ok(match &self.model {
            ImputerModel::Conditional { coef, offset } => {
                let mut pred = select_columns(x, &self.rest) * coef;
                for mut row in pred.row_iter_mut() {
                    row += offset.transpose();
                }
                pred
            }
            ImputerModel::Marginal { means } => {
                DMatrix::from_fn(x.nrows(), self.group.len(), |_, j| means[j])
            }
        })
    }

    /// `(prediction, observed - prediction)` on `x`.
    pub fn predict_with_residuals(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pred = self.predict(x)?;
        let resid = select_columns(x, &self.group) - &pred;
        Ok((pred, resid))
    }
}

fn complement(group: &[usize], p: usize) -> Vec<usize> {
    let mut in_group = vec![false; p];
    for &j in group {
        in_group[j] = true;
    }
    (0..p).filter(|&j| !in_group[j]).collect()
}

fn validate_group(group: &[usize], p: usize, allow_all: bool) -> Result<()> {
    if group.is_empty() {
        return invalid("group must contain at least one variable");
    }
    if group.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("group indices must be strictly increasing");
    }
    if let Some(&bad) = group.iter().find(|&&j| j >= p) {
        return invalid(format!("group index {bad} out of range for p={p}"));
    }
    if !allow_all && group.len() == p {
        return invalid("group covers every variable; no conditioning set remains");
    }
    Ok(())
}

/// Per-penalty quantities shared by every group of one training split.
struct PenaltyCache {
    lambda: f64,
    theta: DMatrix<f64>,
    /// `Z Θ`.
    w: DMatrix<f64>,
    /// Row-wise `zᵢ · wᵢ`.
    s: DVector<f64>,
}

/// Precomputes the standardized training design and `(S + λI)⁻¹` over a
/// penalty grid, then fits imputers for arbitrary groups.
pub struct ImputerFactory {
    n: usize,
    p: usize,
    standardization: Standardization,
    z: DMatrix<f64>,
    caches: Vec<PenaltyCache>,
}

impl ImputerFactory {
    pub fn new(x_train: &DMatrix<f64>, grid: &[f64]) -> Result<Self> {
        let (n, p) = x_train.shape();
        if n < 3 {
            return invalid(format!("imputer training needs at least 3 samples, got {n}"));
        }
        if grid.is_empty() {
            return invalid("empty penalty grid");
        }
        let standardization = Standardization::fit(x_train);
        let z = standardization.apply(x_train);
        let eig = SymmetricEigen::new(z.transpose() * &z);
        let caches = grid
            .iter()
            .map(|&lambda| {
                let lambda = lambda.max(LAMBDA_FLOOR);
                let mut scaled = eig.eigenvectors.clone();
                for (k, mut col) in scaled.column_iter_mut().enumerate() {
                    col /= eig.eigenvalues[k].max(0.0) + lambda;
                }
                let theta = scaled * eig.eigenvectors.transpose();
                let theta = (&theta + theta.transpose()) * 0.5;
                let w = &z * &theta;
                let s = DVector::from_fn(n, |i, _| z.row(i).dot(&w.row(i)));
                PenaltyCache { lambda, theta, w, s }
            })
            .collect();
        Ok(Self {
            n,
            p,
            standardization,
            z,
            caches,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn fit(&self, group: &[usize]) -> Result<Imputer> {
        validate_group(group, self.p, false)?;
        let rest = complement(group, self.p);
        let g = group.len();
        let n = self.n as f64;
        let zg = select_columns(&self.z, group);

        let mut scores = Vec::with_capacity(self.caches.len());
        let mut fitted: Vec<DMatrix<f64>> = Vec::with_capacity(self.caches.len());
        for cache in &self.caches {
            let theta_gg = DMatrix::from_fn(g, g, |a, b| cache.theta[(group[a], group[b])]);
            let chol = theta_gg
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("precision block is not positive definite".into()))?;
            let wg = select_columns(&cache.w, group);
            // u_i = Θ_{G,-G} z_{i,-G}
            let u = &wg - &zg * &theta_gg;
            // ẑ_i = -Θ_GG⁻¹ u_i
            let zhat = -chol.solve(&u.transpose()).transpose();
            let mut sse = 0.0;
            for i in 0..self.n {
                let (zi, wi, ui, hi) = (zg.row(i), wg.row(i), u.row(i), zhat.row(i));
                let leverage = 1.0 / n + cache.s[i] - zi.dot(&wi) - ui.dot(&zi) + ui.dot(&hi);
                let denom = (1.0 - leverage).max(1e-12);
                for k in 0..g {
                    let r = (zi[k] - hi[k]) / denom;
                    sse += r * r;
                }
            }
            scores.push(sse / (n * g as f64));
            fitted.push(zhat);
        }
        let lambdas: Vec<f64> = self.caches.iter().map(|c| c.lambda).collect();
        let curve = CvCurve::select_min(&lambdas, scores);
        let best = lambdas
            .iter()
            .position(|&l| l == curve.selected)
            .expect("selected penalty comes from the grid");
        let cache = &self.caches[best];

        let theta_gg = DMatrix::from_fn(g, g, |a, b| cache.theta[(group[a], group[b])]);
        let chol = theta_gg
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("precision block is not positive definite".into()))?;
        let theta_g_rest = DMatrix::from_fn(g, rest.len(), |a, b| cache.theta[(group[a], rest[b])]);
        // B = -Θ_{-G,G} Θ_GG⁻¹, stored as |rest| × |G|.
        let b_std = -chol.solve(&theta_g_rest).transpose();

        let st = &self.standardization;
        let mut coef = b_std;
        for (r, &j) in rest.iter().enumerate() {
            let s = st.scale(j);
            coef.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        for (k, &j) in group.iter().enumerate() {
            let sd = st.sds[j];
            coef.column_mut(k).iter_mut().for_each(|v| *v *= sd);
        }
        let offset = DVector::from_fn(g, |k, _| {
            st.means[group[k]]
                - rest
                    .iter()
                    .enumerate()
                    .map(|(r, &j)| st.means[j] * coef[(r, k)])
                    .sum::<f64>()
        });
        let mut train_residuals = zg - &fitted[best];
        for (k, &j) in group.iter().enumerate() {
            let sd = st.sds[j];
            train_residuals.column_mut(k).iter_mut().for_each(|v| *v *= sd);
        }
        Ok(Imputer {
            group: group.to_vec(),
            rest,
            p: self.p,
            model: ImputerModel::Conditional { coef, offset },
            lambda: Some(curve.selected),
            cv: Some(curve),
            train_residuals,
        })
    }
}

/// Fits the imputer of `group` on `x_train` with the default penalty grid.
pub fn fit_imputer(x_train: &DMatrix<f64>, group: &[usize]) -> Result<Imputer> {
    ImputerFactory::new(x_train, &default_lambda_grid())?.fit(group)
}
