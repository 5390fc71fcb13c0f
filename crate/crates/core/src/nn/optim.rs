use serde::{Deserialize, Serialize};

use super::loss::Loss;
use super::model::{Gradients, Model};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    Adam,
}

/// Validation quantity used to pick the kept checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointMetric {
    /// Smallest validation RMSE.
    ValRMSE,
    /// Largest validation F1.
    ValF1,
    /// Smallest validation loss.
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// Whether weight decay also shrinks the biases.
    #[serde(default)]
    pub decay_biases: bool,
    pub epochs: usize,
    /// Mini-batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub loss: Loss,
    pub checkpoint_metric: CheckpointMetric,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    /// Upsampler defaults: SGD on shuffled batches of 32, lr 0.9, 2000 epochs, MSE.
    pub fn upsampler() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.9,
            weight_decay: 0.0,
            decay_biases: false,
            epochs: 2000,
            batch_size: Some(32),
            loss: Loss::Mse,
            checkpoint_metric: CheckpointMetric::ValRMSE,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    /// Classifier defaults: Adam, lr 0.003, 1000 epochs, BCE, batches of 32.
    pub fn classifier() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.003,
            epochs: 1000,
            batch_size: Some(32),
            loss: Loss::Bce,
            checkpoint_metric: CheckpointMetric::ValF1,
            ..Self::upsampler()
        }
    }

    /// Regressor defaults: Adam, lr 0.05, weight decay 0.05, 1000 epochs, MSE, batches of 32.
    pub fn regressor() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            weight_decay: 0.05,
            epochs: 1000,
            batch_size: Some(32),
            loss: Loss::Mse,
            checkpoint_metric: CheckpointMetric::ValRMSE,
            ..Self::upsampler()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return bad("weight_decay must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = Gradients::zeros_like(model)
            .blocks()
            .map(|b| vec![0.0; b.len()])
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update.
    ///
    /// SGD: `w ← w − lr·(g + wd·w)`. Adam: the bias-corrected adaptive step,
    /// then decoupled decay `w ← w − lr·wd·w`. Biases are decayed only when
    /// `decay_biases` is set.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, config: &TrainConfig) {
        self.step += 1;
        let lr = config.learning_rate;
        // Blocks alternate weights, biases.
        let decay = |block: usize| {
            if block % 2 == 0 || config.decay_biases {
                config.weight_decay
            } else {
                0.0
            }
        };
        match config.optimizer {
            OptimizerKind::Sgd => {
                for (b, (w, g)) in model.blocks_mut().zip(grads.blocks()).enumerate() {
                    let wd = decay(b);
                    for (wi, &gi) in w.iter_mut().zip(g) {
                        *wi -= lr * (gi + wd * *wi);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (config.adam_beta1, config.adam_beta2);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let blocks = model.blocks_mut().zip(grads.blocks()).zip(
                    self.first_moment
                        .iter_mut()
                        .zip(self.second_moment.iter_mut()),
                );
                for (b, ((w, g), (m, v))) in blocks.enumerate() {
                    let wd = decay(b);
                    for i in 0..w.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
                        w[i] -= lr * wd * w[i];
                    }
                }
            }
        }
    }
}
