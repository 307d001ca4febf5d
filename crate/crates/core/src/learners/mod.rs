//! Predictive models, conditional imputers and losses.

pub mod imputer;
pub mod logistic;
pub mod loss;
pub mod mlp;
pub mod ridge;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use imputer::{fit_imputer, Imputer, ImputerFactory};
pub use logistic::{fit_logistic, fit_logistic_fixed, LogisticModel};
pub use loss::{loss, LossKind, OutputHead};
pub use mlp::{fit_mlp, MlpModel, MlpParams, MlpReport};
pub use ridge::{default_lambda_grid, fit_ridge, fit_ridge_fixed, RidgeModel};

use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Cross-validation scores over a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
    pub selected: f64,
}

impl CvCurve {
    /// Picks the first grid value with the smallest finite score.
    pub fn select_min(values: &[f64], scores: Vec<f64>) -> Self {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.is_finite() && (!scores[best].is_finite() || *s < scores[best]) {
                best = i;
            }
        }
        Self {
            values: values.to_vec(),
            selected: values[best],
            scores,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    Logistic,
    Mlp,
}

impl LearnerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearnerKind::Ridge => "ridge",
            LearnerKind::Logistic => "logistic",
            LearnerKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ridge" => Ok(LearnerKind::Ridge),
            "logistic" => Ok(LearnerKind::Logistic),
            "mlp" => Ok(LearnerKind::Mlp),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Penalty grid for ridge and logistic models.
    pub lambda_grid: Vec<f64>,
    pub inner_cv_folds: usize,
    pub mlp: MlpParams,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Ridge,
            lambda_grid: default_lambda_grid(),
            inner_cv_folds: 5,
            mlp: MlpParams::default(),
        }
    }
}

impl LearnerSpec {
    pub fn of_kind(kind: LearnerKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, LearnerKind::Ridge | LearnerKind::Logistic) {
            if self.lambda_grid.is_empty() {
                return invalid("penalty grid must not be empty");
            }
            if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                return invalid("penalties must be finite and nonnegative");
            }
            if self.inner_cv_folds < 2 {
                return invalid("inner CV needs at least 2 folds");
            }
        }
        if self.kind == LearnerKind::Mlp && self.mlp.width == 0 {
            return invalid("MLP hidden width must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Ridge(RidgeModel),
    Logistic(LogisticModel),
    Mlp(MlpModel),
}

/// Serializable summary of one model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub kind: LearnerKind,
    pub selected_lambda: Option<f64>,
    pub cv: Option<CvCurve>,
    pub mlp: Option<MlpReport>,
}

pub fn fit_model(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rng: &RngStream,
) -> Result<(FittedModel, TrainingReport)> {
    spec.validate()?;
    match spec.kind {
        LearnerKind::Ridge => {
            let (m, cv) = fit_ridge(x, y, &spec.lambda_grid, spec.inner_cv_folds, rng)?;
            let report = TrainingReport {
                kind: spec.kind,
                selected_lambda: Some(cv.selected),
                cv: Some(cv),
                mlp: None,
            };
            Ok((FittedModel::Ridge(m), report))
        }
        LearnerKind::Logistic => {
            let (m, cv) = fit_logistic(x, y, &spec.lambda_grid, spec.inner_cv_folds, rng)?;
            let report = TrainingReport {
                kind: spec.kind,
                selected_lambda: Some(cv.selected),
                cv: Some(cv),
                mlp: None,
            };
            Ok((FittedModel::Logistic(m), report))
        }
        LearnerKind::Mlp => {
            let (m, r) = fit_mlp(x, y, &spec.mlp, rng)?;
            let report = TrainingReport {
                kind: spec.kind,
                selected_lambda: None,
                cv: None,
                mlp: Some(r),
            };
            Ok((FittedModel::Mlp(m), report))
        }
    }
}

/// Cached model internals on a reference input, reused to score inputs that
/// differ from it only in a few columns.
#[derive(Debug, Clone)]
pub struct BaseEval {
    head: OutputHead,
    /// Linear predictor (value or log-odds).
    linear: Option<DVector<f64>>,
    /// Hidden pre-activations of the MLP.
    hidden: Option<DMatrix<f64>>,
    /// Raw-scale first layer of the MLP.
    first_layer: Option<DMatrix<f64>>,
    output: DVector<f64>,
}

impl BaseEval {
    pub fn output(&self) -> &DVector<f64> {
        &self.output
    }
}

fn apply_head(head: OutputHead, linear: DVector<f64>) -> DVector<f64> {
    match head {
        OutputHead::Probability => linear.map(logistic::sigmoid),
        OutputHead::Value | OutputHead::Margin => linear,
    }
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedModel::Ridge(_) => LearnerKind::Ridge,
            FittedModel::Logistic(_) => LearnerKind::Logistic,
            FittedModel::Mlp(_) => LearnerKind::Mlp,
        }
    }

    fn check_head(&self, head: OutputHead) -> Result<()> {
        let ok = match self {
            FittedModel::Ridge(_) | FittedModel::Mlp(_) => head == OutputHead::Value,
            FittedModel::Logistic(_) => head != OutputHead::Value,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("{} model cannot produce {head:?} outputs", self.kind().as_str()))
        }
    }

    pub fn output(&self, x: &DMatrix<f64>, head: OutputHead) -> Result<DVector<f64>> {
        Ok(self.prepare(x, head)?.output)
    }

    pub fn prepare(&self, x: &DMatrix<f64>, head: OutputHead) -> Result<BaseEval> {
        self.check_head(head)?;
        Ok(match self {
            FittedModel::Ridge(m) => {
                let lin = m.predict(x);
                BaseEval {
                    head,
                    output: lin.clone(),
                    linear: Some(lin),
                    hidden: None,
                    first_layer: None,
                }
            }
            FittedModel::Logistic(m) => {
                let lin = m.margin(x);
                BaseEval {
                    head,
                    output: apply_head(head, lin.clone()),
                    linear: Some(lin),
                    hidden: None,
                    first_layer: None,
                }
            }
            FittedModel::Mlp(m) => {
                let (w, b) = m.raw_first_layer();
                let mut h = x * &w;
                for mut row in h.row_iter_mut() {
                    row += b.transpose();
                }
                BaseEval {
                    head,
                    output: m.output_from_hidden(&h),
                    linear: None,
                    hidden: Some(h),
                    first_layer: Some(w),
                }
            }
        })
    }

    fn coef(&self) -> &[f64] {
        match self {
            FittedModel::Ridge(m) => m.coef(),
            FittedModel::Logistic(m) => m.coef(),
            FittedModel::Mlp(_) => &[],
        }
    }

    /// Output on `x` with the columns `group` replaced by `values`
    /// (`n × |group|`), computed incrementally from `base = prepare(x)`.
    pub fn output_substituted(
        &self,
        base: &BaseEval,
        x: &DMatrix<f64>,
        group: &[usize],
        values: &DMatrix<f64>,
    ) -> DVector<f64> {
        let n = x.nrows();
        match self {
            FittedModel::Ridge(_) | FittedModel::Logistic(_) => {
                let coef = self.coef();
                let mut lin = base.linear.clone().expect("linear cache");
                for (k, &j) in group.iter().enumerate() {
                    let b = coef[j];
                    if b == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        lin[i] += (values[(i, k)] - x[(i, j)]) * b;
                    }
                }
                apply_head(base.head, lin)
            }
            FittedModel::Mlp(m) => {
                let mut h = base.hidden.clone().expect("hidden cache");
                let w = base.first_layer.as_ref().expect("first layer cache");
                let mut delta = values.clone();
                let mut wg = DMatrix::zeros(group.len(), w.ncols());
                for (k, &j) in group.iter().enumerate() {
                    for i in 0..n {
                        delta[(i, k)] -= x[(i, j)];
                    }
                    wg.set_row(k, &w.row(j));
                }
                h.gemm(1.0, &delta, &wg, 1.0);
                m.output_from_hidden(&h)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::select_columns;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = RngStream::new(seed).rng();
        let x = DMatrix::from_fn(n, p, |_, _| r.sample(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 2.0 * x[(i, 1)] + 0.1 * r.sample::<f64, _>(StandardNormal));
        (x, y)
    }

    fn substituted_matches_full(model: &FittedModel, head: OutputHead, x: &DMatrix<f64>) {
        let base = model.prepare(x, head).unwrap();
        let group = [1usize, 3];
        let mut r = RngStream::new(99).rng();
        let values = DMatrix::from_fn(x.nrows(), 2, |_, _| r.sample(StandardNormal));
        let mut x2 = x.clone();
        for (k, &j) in group.iter().enumerate() {
            x2.set_column(j, &values.column(k));
        }
        let fast = model.output_substituted(&base, x, &group, &values);
        let full = model.output(&x2, head).unwrap();
        assert!((fast - full).amax() < 1e-10);
        // unchanged columns reproduce the base output
        let same = model.output_substituted(&base, x, &group, &select_columns(x, &group));
        assert!((same - base.output()).amax() < 1e-12);
    }

    #[test]
    fn incremental_outputs_match_full_evaluation() {
        let (x, y) = data(60, 5, 1);
        let (ridge, _) = fit_model(&LearnerSpec::default(), &x, &y, &RngStream::new(2)).unwrap();
        substituted_matches_full(&ridge, OutputHead::Value, &x);

        let labels = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (logit, _) = fit_model(&LearnerSpec::of_kind(LearnerKind::Logistic), &x, &labels, &RngStream::new(3)).unwrap();
        substituted_matches_full(&logit, OutputHead::Probability, &x);
        substituted_matches_full(&logit, OutputHead::Margin, &x);

        let mut spec = LearnerSpec::of_kind(LearnerKind::Mlp);
        spec.mlp.width = 8;
        spec.mlp.max_epochs = 5;
        let (mlp, _) = fit_model(&spec, &x, &y, &RngStream::new(4)).unwrap();
        substituted_matches_full(&mlp, OutputHead::Value, &x);
    }

    #[test]
    fn head_compatibility() {
        let (x, y) = data(30, 3, 5);
        let (ridge, _) = fit_model(&LearnerSpec::default(), &x, &y, &RngStream::new(2)).unwrap();
        assert!(ridge.output(&x, OutputHead::Probability).is_err());
    }

    #[test]
    fn cv_curve_picks_first_minimum() {
        let c = CvCurve::select_min(&[1.0, 2.0, 3.0], vec![f64::NAN, 0.5, 0.5]);
        assert_eq!(c.selected, 2.0);
    }
}
