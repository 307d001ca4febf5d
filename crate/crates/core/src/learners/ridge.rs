use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::CvCurve;
use crate::data::{kfold_split, select_entries, select_rows, Standardization};
use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Smallest penalty ever used in a solve.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Ten log-spaced penalties from 1e-3 to 1e3.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 9.0)).collect()
}

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub standardization: Standardization,
    /// Coefficients on the standardized scale.
    pub coef_std: Vec<f64>,
    /// Mean of the training outcome.
    pub intercept: f64,
    pub lambda: f64,
    coef_raw: Vec<f64>,
    offset: f64,
}

impl RidgeModel {
    fn new(standardization: Standardization, coef_std: Vec<f64>, intercept: f64, lambda: f64) -> Self {
        let coef_raw: Vec<f64> = coef_std
            .iter()
            .enumerate()
            .map(|(j, w)| w * standardization.scale(j))
            .collect();
        let offset = intercept
            - coef_raw
                .iter()
                .zip(&standardization.means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        Self {
            standardization,
            coef_std,
            intercept,
            lambda,
            coef_raw,
            offset,
        }
    }

    /// Coefficients on the original feature scale.
    pub fn coef(&self) -> &[f64] {
        &self.coef_raw
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let b = DVector::from_column_slice(&self.coef_raw);
        (x * b).add_scalar(self.offset)
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return invalid(format!("{} rows vs {} targets", x.nrows(), y.len()));
    }
    if x.nrows() < 2 {
        return invalid("need at least two training samples");
    }
    Ok(())
}

/// Solves `(ZᵀZ + λI) w = Zᵀ(y - ȳ)` by Cholesky at a fixed penalty.
pub fn fit_ridge_fixed(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<RidgeModel> {
    check_xy(x, y)?;
    let lambda = lambda.max(LAMBDA_FLOOR);
    let standardization = Standardization::fit(x);
    let z = standardization.apply(x);
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let mut a = z.transpose() * &z;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let rhs = z.transpose() * yc;
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| crate::Error::InvalidArgument("singular ridge system".into()))?,
    };
    Ok(RidgeModel::new(standardization, w.iter().copied().collect(), y_mean, lambda))
}

/// Ridge path over `grid` from one eigendecomposition of `ZᵀZ`.
pub(crate) struct RidgePath {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    proj: DVector<f64>,
}

impl RidgePath {
    pub(crate) fn new(z: &DMatrix<f64>, yc: &DVector<f64>) -> Self {
        let eig = SymmetricEigen::new(z.transpose() * z);
        let proj = eig.eigenvectors.transpose() * (z.transpose() * yc);
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            proj,
        }
    }

    pub(crate) fn coef(&self, lambda: f64) -> DVector<f64> {
        let lambda = lambda.max(LAMBDA_FLOOR);
        let scaled = DVector::from_fn(self.proj.len(), |i, _| {
            self.proj[i] / (self.values[i].max(0.0) + lambda)
        });
        &self.vectors * scaled
    }
}

/// Ridge with the penalty chosen by `inner_folds`-fold cross-validated MSE.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    inner_folds: usize,
    rng: &RngStream,
) -> Result<(RidgeModel, CvCurve)> {
    check_xy(x, y)?;
    if grid.is_empty() {
        return invalid("empty penalty grid");
    }
    if inner_folds < 2 || x.nrows() <= inner_folds {
        return invalid(format!(
            "inner CV needs 2 <= folds < n, got {inner_folds} folds for {} samples",
            x.nrows()
        ));
    }
    let plan = kfold_split(x.nrows(), inner_folds, None, rng)?;
    let mut sse = vec![0.0; grid.len()];
    for k in 0..inner_folds {
        let (tr, va) = (plan.train_indices(k), plan.test_indices(k));
        let (xt, yt) = (select_rows(x, &tr), select_entries(y, &tr));
        let (xv, yv) = (select_rows(x, &va), select_entries(y, &va));
        let s = Standardization::fit(&xt);
        let zt = s.apply(&xt);
        let zv = s.apply(&xv);
        let y_mean = yt.mean();
        let path = RidgePath::new(&zt, &yt.add_scalar(-y_mean));
        for (g, &lambda) in grid.iter().enumerate() {
            let pred = (&zv * path.coef(lambda)).add_scalar(y_mean);
            sse[g] += (pred - &yv).norm_squared();
        }
    }
    let scores: Vec<f64> = sse.iter().map(|s| s / x.nrows() as f64).collect();
    let curve = CvCurve::select_min(grid, scores);
    let model = fit_ridge_fixed(x, y, curve.selected)?;
    Ok((model, curve))
}
