use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{dsm_loss, Weighting};
use super::mlp::MlpScoreNet;
use super::schedule::VpSchedule;
use crate::error::{MtdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Lower cutoff of the diffusion-time draw.
    pub t_min: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            steps: 20_000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            t_min: 1e-3,
            weighting: Weighting::Variance,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, schedule: &VpSchedule) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MtdError::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(MtdError::InvalidParameter("learning rate must be positive".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < schedule.horizon) {
            return Err(MtdError::InvalidParameter(format!(
                "t_min {} outside (0, {})",
                self.t_min, schedule.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpScoreNet,
    /// Minibatch loss at every step.
    pub history: Vec<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Minimises the denoising loss by minibatch first-order steps.
///
/// Batches are sampled with replacement from the rows of `dataset`. All
/// randomness comes from `config.seed`.
pub fn train(mut net: MlpScoreNet, dataset: ArrayView2<f64>, schedule: &VpSchedule, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(schedule)?;
    if dataset.nrows() == 0 {
        return Err(MtdError::InvalidParameter("empty training set".into()));
    }
    if dataset.ncols() != net.data_dim() {
        return Err(MtdError::DimensionMismatch(format!(
            "training rows have {} values, net expects {}",
            dataset.ncols(),
            net.data_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(config.steps);
    let mut batch = Array2::zeros((config.batch_size, dataset.ncols()));
    for step in 0..config.steps {
        for mut row in batch.axis_iter_mut(Axis(0)) {
            let pick = rng.random_range(0..dataset.nrows());
            row.assign(&dataset.row(pick));
        }
        let (loss, grads) = dsm_loss(&net, batch.view(), schedule, config.weighting, config.t_min, &mut rng)?;
        if !loss.is_finite() {
            return Err(MtdError::TrainingDiverged { step });
        }
        let grads = grads.flatten();
        match config.optimizer {
            OptimizerKind::Adam => adam.update(&mut params, &grads, config.learning_rate),
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    *p -= config.learning_rate * g;
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(MtdError::TrainingDiverged { step });
        }
        net.set_params(&params)?;
        history.push(loss);
    }
    Ok(TrainOutcome { net, history })
}

/// Trailing moving average over `window` steps.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(history.len());
    let mut acc = 0.0;
    for (i, v) in history.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= history[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
