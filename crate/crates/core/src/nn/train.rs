use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use super::optim::{OptimizerState, TrainConfig};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl Example {
    pub fn new(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self { input, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    /// Checkpoint score of the kept weights (lower is better).
    pub best_score: f64,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

/// Trains `model` in place and leaves it at the best-scoring epoch.
///
/// `score` is evaluated after every epoch and must return a value where
/// lower is better (negate metrics such as F1). Mini-batches are drawn
/// from a shuffle seeded by `config.seed`; full-batch training keeps the
/// data order.
pub fn fit<F>(
    model: &mut Model,
    data: &[Example],
    config: &TrainConfig,
    mut score: F,
) -> Result<TrainReport, NnError>
where
    F: FnMut(&Model) -> f64,
{
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = OptimizerState::new(model);
    let mut grads = Gradients::zeros_like(model);
    let batch = config.batch_size.unwrap_or(data.len()).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut best = model.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut train_loss = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if batch < data.len() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.fill_zero();
            for &i in chunk {
                let ex = &data[i];
                total +=
                    model.accumulate_gradients(&ex.input, &ex.target, config.loss, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            state.step(model, &grads, config);
        }
        let mean_loss = total / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(NnError::TrainingDiverged {
                epoch,
                loss: mean_loss,
            });
        }
        train_loss.push(mean_loss);

        let s = score(model);
        if s < best_score || best_epoch == 0 {
            best_score = s;
            best_epoch = epoch;
            best.clone_from(model);
        }
    }
    *model = best;
    Ok(TrainReport {
        best_epoch,
        best_score,
        train_loss,
    })
}
