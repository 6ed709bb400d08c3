use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkParams, NeuralError};
use crate::matrix::Matrix;
use crate::num::Scalar;

/// One training sequence: input rows and target rows of equal length.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub inputs: Matrix<T>,
    pub targets: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient norm limit.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
    /// Fraction of pieces held out for early stopping and model selection.
    pub holdout_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            max_epochs: 500,
            seed: 0,
            patience: 50,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::TrainingConfig(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and ≥ 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.clip_norm > 0.0) {
            return bad("epsilon and clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub holdout_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<T> {
    /// Parameters with the lowest holdout loss (training loss without a holdout set).
    pub params: NetworkParams<T>,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0 }
    }

    fn update(&mut self, params: &mut [T], grads: &[T], c: &TrainingConfig) {
        self.step += 1;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let corr1 = one - b1.powi(self.step);
        let corr2 = one - b2.powi(self.step);
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= lr * (*m / corr1) / ((*v / corr2).sqrt() + eps);
        }
    }
}

fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: f64) {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt().as_f64();
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Trains a freshly initialized network with Adam, one piece per step.
pub fn train<T: Scalar>(
    network: &NetworkConfig,
    dataset: &[Sample<T>],
    config: &TrainingConfig,
) -> Result<TrainingOutcome<T>, NeuralError> {
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    config.validate()?;
    let mut params = NetworkParams::init(network)?;
    for s in dataset {
        if s.inputs.rows() != s.targets.rows() || s.targets.cols() != network.output_size {
            return Err(NeuralError::TargetShape {
                expected: (s.inputs.rows(), network.output_size),
                got: s.targets.shape(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng);
    let n_holdout = (dataset.len() as f64 * config.holdout_fraction).floor() as usize;
    let (holdout, training) = indices.split_at(n_holdout);
    let mut holdout = holdout.to_vec();
    holdout.sort_unstable();
    let mut training = training.to_vec();
    training.sort_unstable();

    let mut adam = Adam::new(params.as_slice().len());
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut order = training.clone();
    let mut piece_loss = vec![0.0; dataset.len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let s = &dataset[i];
            let (loss, mut grads) = params.loss_and_grads(&s.inputs, &s.targets)?;
            piece_loss[i] = loss.as_f64();
            clip_global_norm(&mut grads, config.clip_norm);
            adam.update(params.as_mut_slice(), &grads, config);
        }
        // Summed in index order so the figure is independent of the shuffle.
        let train_mse = training.iter().map(|&i| piece_loss[i]).sum::<f64>() / training.len().max(1) as f64;
        let holdout_mse = if holdout.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for &i in &holdout {
                total += params.loss(&dataset[i].inputs, &dataset[i].targets)?.as_f64();
            }
            Some(total / holdout.len() as f64)
        };
        if !train_mse.is_finite() || holdout_mse.is_some_and(|h| !h.is_finite()) {
            return Err(NeuralError::NonFiniteLoss(epoch));
        }
        history.push(EpochLoss { epoch, train_mse, holdout_mse });
        log::debug!("epoch {epoch}: train {train_mse:.6} holdout {holdout_mse:?}");

        let score = holdout_mse.unwrap_or(train_mse);
        if score < best.0 {
            best = (score, params.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }

    // With no improvement at all (e.g. a zero learning rate) keep the initial weights.
    let (_, params, best_epoch) = best;
    Ok(TrainingOutcome { params, history, best_epoch })
}

/// Writes the loss history as CSV `epoch,train_mse,holdout_mse`.
pub fn write_training_log<W: Write>(history: &[EpochLoss], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_mse", "holdout_mse"])?;
    for e in history {
        w.write_record([e.epoch.to_string(), e.train_mse.to_string(), e.holdout_mse.map(|h| h.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}
