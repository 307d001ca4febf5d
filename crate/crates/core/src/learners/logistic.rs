use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CvCurve;
use crate::data::{kfold_split, select_entries, select_rows, Standardization};
use crate::error::{invalid, Result};
use crate::rng::RngStream;

use super::ridge::LAMBDA_FLOOR;

pub const MAX_NEWTON_ITERATIONS: usize = 200;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// L2-penalized logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub standardization: Standardization,
    pub coef_std: Vec<f64>,
    pub intercept: f64,
    pub penalty: f64,
    pub iterations: usize,
    pub converged: bool,
    coef_raw: Vec<f64>,
    offset: f64,
}

impl LogisticModel {
    fn new(
        standardization: Standardization,
        coef_std: Vec<f64>,
        intercept: f64,
        penalty: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
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
            penalty,
            iterations,
            converged,
            coef_raw,
            offset,
        }
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef_raw
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Log-odds of class 1.
    pub fn margin(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * DVector::from_column_slice(&self.coef_raw)).add_scalar(self.offset)
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.margin(x).map(sigmoid)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn check_labels(y: &DVector<f64>) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return invalid("logistic targets must be 0 or 1");
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return invalid("logistic regression needs both classes present");
    }
    Ok(())
}

fn objective(z: &DMatrix<f64>, y: &DVector<f64>, c: f64, w: &DVector<f64>, penalty: f64) -> f64 {
    let eta = (z * w).add_scalar(c);
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &t)| softplus(e) - t * e)
        .sum::<f64>()
        + 0.5 * penalty * w.norm_squared()
}

/// Newton iterations with backtracking on the penalized negative
/// log-likelihood. Returns `(intercept, weights, iterations, converged)`.
fn newton(z: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> (f64, DVector<f64>, usize, bool) {
    let (n, p) = z.shape();
    let mut c = {
        let m = y.mean().clamp(1e-6, 1.0 - 1e-6);
        (m / (1.0 - m)).ln()
    };
    let mut w = DVector::zeros(p);
    let mut f = objective(z, y, c, &w, penalty);
    // Augmented design [1 | Z].
    let mut a = DMatrix::from_element(n, p + 1, 1.0);
    a.columns_mut(1, p).copy_from(z);
    for it in 0..MAX_NEWTON_ITERATIONS {
        let eta = (z * &w).add_scalar(c);
        let prob = eta.map(sigmoid);
        let resid = &prob - y;
        let mut grad = a.transpose() * &resid;
        for j in 0..p {
            grad[j + 1] += penalty * w[j];
        }
        if grad.amax() < GRADIENT_TOLERANCE {
            return (c, w, it, true);
        }
        let weights = prob.map(|q| (q * (1.0 - q)).max(1e-12));
        let mut wa = a.clone();
        for (i, mut row) in wa.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hess = a.transpose() * wa;
        for j in 0..p {
            hess[(j + 1, j + 1)] += penalty;
        }
        hess[(0, 0)] += 1e-12;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => grad.clone(),
            },
        };
        let mut t = 1.0;
        let slope = grad.dot(&step);
        loop {
            let c_new = c - t * step[0];
            let w_new = &w - step.rows(1, p) * t;
            let f_new = objective(z, y, c_new, &w_new, penalty);
            if f_new <= f - 1e-4 * t * slope || t < 1e-10 {
                c = c_new;
                w = w_new;
                f = f_new;
                break;
            }
            t *= 0.5;
        }
    }
    let eta = (z * &w).add_scalar(c);
    let resid = eta.map(sigmoid) - y;
    let mut grad = a.transpose() * resid;
    for j in 0..p {
        grad[j + 1] += penalty * w[j];
    }
    let converged = grad.amax() < GRADIENT_TOLERANCE;
    (c, w, MAX_NEWTON_ITERATIONS, converged)
}

/// Logistic regression at a fixed L2 penalty (intercept unpenalized).
pub fn fit_logistic_fixed(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> Result<LogisticModel> {
    if x.nrows() != y.len() {
        return invalid(format!("{} rows vs {} targets", x.nrows(), y.len()));
    }
    check_labels(y)?;
    let penalty = penalty.max(LAMBDA_FLOOR);
    let standardization = Standardization::fit(x);
    let z = standardization.apply(x);
    let (c, w, iterations, converged) = newton(&z, y, penalty);
    Ok(LogisticModel::new(
        standardization,
        w.iter().copied().collect(),
        c,
        penalty,
        iterations,
        converged,
    ))
}

/// Logistic regression with the penalty chosen by stratified inner CV on
/// mean log-loss.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    inner_folds: usize,
    rng: &RngStream,
) -> Result<(LogisticModel, CvCurve)> {
    if x.nrows() != y.len() {
        return invalid(format!("{} rows vs {} targets", x.nrows(), y.len()));
    }
    check_labels(y)?;
    if grid.is_empty() {
        return invalid("empty penalty grid");
    }
    let labels: Vec<f64> = y.iter().copied().collect();
    let plan = kfold_split(x.nrows(), inner_folds, Some(&labels), rng)?;
    let mut total = vec![0.0; grid.len()];
    for k in 0..inner_folds {
        let (tr, va) = (plan.train_indices(k), plan.test_indices(k));
        let (xt, yt) = (select_rows(x, &tr), select_entries(y, &tr));
        let (xv, yv) = (select_rows(x, &va), select_entries(y, &va));
        for (g, &pen) in grid.iter().enumerate() {
            let m = fit_logistic_fixed(&xt, &yt, pen)?;
            let prob = m.predict_proba(&xv);
            total[g] += super::loss(super::LossKind::CrossEntropy, &yv, &prob)? * va.len() as f64;
        }
    }
    let scores = total.iter().map(|t| t / x.nrows() as f64).collect();
    let curve = CvCurve::select_min(grid, scores);
    let model = fit_logistic_fixed(x, y, curve.selected)?;
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn null_model_under_strong_penalty() {
        let mut r = RngStream::new(1).rng();
        let x = DMatrix::from_fn(40, 3, |_, _| r.sample(StandardNormal));
        let y = DVector::from_fn(40, |i, _| (i % 2) as f64);
        let m = fit_logistic_fixed(&x, &y, 1e8).unwrap();
        for q in m.predict_proba(&x).iter() {
            assert!((q - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn separable_direction() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 - 9.5);
        let y = DVector::from_fn(20, |i, _| if i < 10 { 1.0 } else { 0.0 });
        let m = fit_logistic_fixed(&x, &y, 1e-3).unwrap();
        assert!(m.coef()[0] < 0.0);
        assert!(m.coef().iter().all(|b| b.is_finite()));
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i * j) as f64);
        assert!(fit_logistic_fixed(&x, &DVector::from_element(6, 1.0), 1.0).is_err());
        assert!(fit_logistic_fixed(&x, &DVector::from_element(6, 2.0), 1.0).is_err());
    }

    #[test]
    fn penalized_gradient_vanishes() {
        let mut r = RngStream::new(2).rng();
        let x = DMatrix::from_fn(60, 4, |_, _| r.sample(StandardNormal));
        let y = DVector::from_fn(60, |i, _| {
            let s: f64 = x[(i, 0)] - 0.5 * x[(i, 2)] + r.sample::<f64, _>(StandardNormal);
            if s > 0.0 { 1.0 } else { 0.0 }
        });
        let m = fit_logistic_fixed(&x, &y, 0.3).unwrap();
        assert!(m.converged);
        let z = m.standardization.apply(&x);
        let w = DVector::from_column_slice(&m.coef_std);
        let resid = (&z * &w).add_scalar(m.intercept).map(sigmoid) - &y;
        let gw = z.transpose() * &resid + &w * 0.3;
        let gc = resid.sum();
        assert!(gw.amax() < 1e-6 && gc.abs() < 1e-6);
    }

    #[test]
    fn cv_runs() {
        let mut r = RngStream::new(3).rng();
        let x = DMatrix::from_fn(80, 3, |_, _| r.sample(StandardNormal));
        let y = DVector::from_fn(80, |i, _| if x[(i, 1)] > 0.0 { 1.0 } else { 0.0 });
        let (m, curve) = fit_logistic(&x, &y, &[0.01, 1.0, 100.0], 4, &RngStream::new(4)).unwrap();
        assert_eq!(curve.scores.len(), 3);
        assert!(m.coef()[1] > 0.0);
    }
}
