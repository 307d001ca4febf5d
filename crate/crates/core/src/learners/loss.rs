use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const PROB_CLIP: f64 = 1e-12;

/// Loss used in the importance difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Rmse,
    CrossEntropy,
    Hinge,
    ZeroOne,
}

/// Which model output a loss consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    /// Real-valued regression prediction.
    Value,
    /// Probability of class 1.
    Probability,
    /// Signed margin score, positive for class 1.
    Margin,
}

impl LossKind {
    pub fn head(&self) -> OutputHead {
        match self {
            LossKind::Rmse => OutputHead::Value,
            LossKind::CrossEntropy | LossKind::ZeroOne => OutputHead::Probability,
            LossKind::Hinge => OutputHead::Margin,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Rmse => "rmse",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Hinge => "hinge",
            LossKind::ZeroOne => "zero_one",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rmse" => Ok(LossKind::Rmse),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            "zero_one" => Ok(LossKind::ZeroOne),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

/// Evaluates `kind` on targets `y` and model outputs `pred`.
///
/// Classification targets are `{0, 1}`; hinge maps them to `{-1, +1}`.
pub fn loss(kind: LossKind, y: &DVector<f64>, pred: &DVector<f64>) -> Result<f64> {
    if y.len() != pred.len() {
        return invalid(format!("{} targets vs {} predictions", y.len(), pred.len()));
    }
    if y.is_empty() {
        return invalid("loss of an empty sample");
    }
    let n = y.len() as f64;
    let pairs = y.iter().zip(pred.iter());
    let v = match kind {
        LossKind::Rmse => (pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt(),
        LossKind::CrossEntropy => {
            -pairs
                .map(|(&t, &q)| {
                    let q = q.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    t * q.ln() + (1.0 - t) * (1.0 - q).ln()
                })
                .sum::<f64>()
                / n
        }
        LossKind::Hinge => {
            pairs
                .map(|(&t, &s)| {
                    let sign = if t > 0.5 { 1.0 } else { -1.0 };
                    (1.0 - sign * s).max(0.0)
                })
                .sum::<f64>()
                / n
        }
        LossKind::ZeroOne => {
            pairs
                .filter(|(&t, &q)| (q >= 0.5) != (t > 0.5))
                .count() as f64
                / n
        }
    };
    Ok(v)
}
