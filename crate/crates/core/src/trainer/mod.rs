//! Mini-batch training with Adam, validation-based early stopping and
//! best-of-N restarts.

mod adam;
mod fit;
mod runner;

pub use adam::{adam_step, AdamState};
pub use fit::{fit_with, multi_restart_fit, select_best, EpochRunner, RunResult, RunSummary};
pub use runner::{evaluate_loss, fit, select_rows, NetworkRunner, TrainingData};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without a new validation minimum before stopping.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub restarts: usize,
    pub base_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience_epochs: 40,
            max_epochs: 1000,
            restarts: 200,
            base_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.patience_epochs < 1 || self.max_epochs < 1 || self.restarts < 1 {
            return Err(Error::invalid(
                "patience, max_epochs and restarts must all be at least 1",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} is invalid", self.learning_rate)));
        }
        let betas_ok = [self.adam_beta1, self.adam_beta2]
            .iter()
            .all(|b| (0.0..1.0).contains(b));
        if !betas_ok || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

/// Mean squared error and its gradient `2(pred − target)/N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.rank() != 1 || pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: target.dims().to_vec(),
            actual: pred.dims().to_vec(),
        });
    }
    let n = pred.numel() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// A fresh permutation of `0..n` cut into batches. A final batch of a single
/// sample is dropped, since batch normalization cannot train on it.
pub fn shuffle_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}
