use serde::{Deserialize, Serialize};

use super::NnError;

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "BCE")]
    Bce,
}

fn check(pred: &[f64], target: &[f64]) -> Result<(), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::Shape {
            layer: usize::MAX,
            expected: pred.len(),
            got: target.len(),
        });
    }
    Ok(())
}

/// Mean loss over the elements of one prediction.
pub fn loss_eval(loss: Loss, pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(match loss {
        Loss::Mse => {
            pred.iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        }
        Loss::Bce => {
            pred.iter()
                .zip(target)
                .map(|(&p, &y)| {
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
    })
}

/// Gradient of [`loss_eval`] with respect to the prediction.
///
/// For BCE the clamp acts as a pass-through, so saturated outputs still
/// receive a (small) gradient instead of a dead zero.
pub fn loss_gradient(loss: Loss, pred: &[f64], target: &[f64]) -> Result<Vec<f64>, NnError> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(match loss {
        Loss::Mse => pred
            .iter()
            .zip(target)
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect(),
        Loss::Bce => pred
            .iter()
            .zip(target)
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                (p - y) / (pc * (1.0 - pc)) / n
            })
            .collect(),
    })
}
