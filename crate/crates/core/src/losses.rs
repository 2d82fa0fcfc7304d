//! Training objectives: return-weighted cross-entropy, plain cross-entropy and MSE.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;

/// Probabilities are clipped below at this value before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("target is not one-hot: {0:?}")]
    NotOneHot(Vec<f64>),
    #[error("loss weight {0} outside [0, 0.5]")]
    WeightOutOfRange(f64),
    #[error("prediction has {got} components, expected {want}")]
    Arity { got: usize, want: usize },
    #[error("unknown loss '{0}' (expected new, ce or mse)")]
    Unknown(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "new")]
    ReturnWeighted,
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "mse")]
    Mse,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::ReturnWeighted, LossKind::CrossEntropy, LossKind::Mse];

    pub fn output_arity(self) -> usize {
        match self {
            LossKind::Mse => 1,
            _ => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::ReturnWeighted => "new",
            LossKind::CrossEntropy => "ce",
            LossKind::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "new" | "return_weighted" | "return_weighted_ce" => Ok(LossKind::ReturnWeighted),
            "ce" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(LossError::Unknown(other.to_string())),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn true_class(p: &[f64]) -> Result<usize> {
    let ones = p.iter().filter(|v| **v == 1.0).count();
    let zeros = p.iter().filter(|v| **v == 0.0).count();
    if ones != 1 || ones + zeros != p.len() {
        return Err(LossError::NotOneHot(p.to_vec()));
    }
    Ok(p.iter().position(|v| *v == 1.0).unwrap())
}

/// `−Σ pᵢ ln qᵢ` for a one-hot `p`, with `q` clipped below at [`PROB_FLOOR`].
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(LossError::Arity {
            got: q.len(),
            want: p.len(),
        });
    }
    let i = true_class(p)?;
    Ok(-q[i].max(PROB_FLOOR).ln())
}

/// Cross-entropy scaled by the capped absolute return of the sample.
pub fn return_weighted_loss(y_true: &[f64], y_pred: &[f64], weight: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&weight) {
        return Err(LossError::WeightOutOfRange(weight));
    }
    Ok(cross_entropy(y_true, y_pred)? * weight)
}

pub fn mse(y: f64, y_hat: f64) -> f64 {
    (y - y_hat).powi(2)
}

/// What a loss needs to know about one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub label: Label,
    pub weight: f64,
    pub r_d: f64,
}

/// Batch-mean loss and its gradient with respect to the model outputs
/// (probabilities for the classification kinds, raw scalars for MSE).
pub fn batch_loss(kind: LossKind, outputs: &[f64], targets: &[Target]) -> Result<(f64, Vec<f64>)> {
    let a = kind.output_arity();
    if outputs.len() != a * targets.len() {
        return Err(LossError::Arity {
            got: outputs.len(),
            want: a * targets.len(),
        });
    }
    let n = targets.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; outputs.len()];
    for (i, t) in targets.iter().enumerate() {
        let out = &outputs[i * a..(i + 1) * a];
        match kind {
            LossKind::Mse => {
                total += mse(t.r_d, out[0]);
                grad[i] = 2.0 * (out[0] - t.r_d) / n;
            }
            LossKind::CrossEntropy | LossKind::ReturnWeighted => {
                let w = if kind == LossKind::ReturnWeighted {
                    if !(0.0..=0.5).contains(&t.weight) {
                        return Err(LossError::WeightOutOfRange(t.weight));
                    }
                    t.weight
                } else {
                    1.0
                };
                let c = t.label.index();
                let q = out[c];
                total += -w * q.max(PROB_FLOOR).ln();
                if q > PROB_FLOOR {
                    grad[i * a + c] = -w / (q * n);
                }
            }
        }
    }
    Ok((total / n, grad))
}
