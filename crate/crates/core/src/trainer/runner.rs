use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, fit_with, mse_loss, shuffle_batches, AdamState, EpochRunner, RunResult, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::Tensor;

/// Inputs `[N, ...]` with standardized targets `[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl TrainingData {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        if targets.rank() != 1 || inputs.rank() < 2 || inputs.dims()[0] != targets.numel() {
            return Err(Error::ShapeMismatch {
                expected: vec![targets.numel()],
                actual: inputs.dims().to_vec(),
            });
        }
        Ok(TrainingData { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rows `indices` of a `[N, ...]` tensor.
pub fn select_rows(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let n = t.dims()[0];
    let row = t.numel() / n;
    let mut out = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        if i >= n {
            return Err(Error::invalid(format!("row {i} out of range for {n} rows")));
        }
        out.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut dims = t.dims().to_vec();
    dims[0] = indices.len();
    Tensor::from_vec(&dims, out)
}

const EVAL_CHUNK: usize = 256;

/// Inference-mode MSE over `data`, evaluated in fixed chunks.
pub fn evaluate_loss(net: &Network, data: &TrainingData) -> Result<f64> {
    let n = data.len();
    let mut sum = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let pred = net.predict(&select_rows(&data.inputs, &idx)?)?;
        let target = select_rows(&data.targets, &idx)?;
        sum += mse_loss(&pred, &target)?.0 * idx.len() as f64;
    }
    Ok(sum / n as f64)
}

/// Trains a [`Network`]: batch norm in training mode for updates, inference
/// mode for validation.
pub struct NetworkRunner<'a> {
    net: Network,
    adam: AdamState,
    rng: ChaCha8Rng,
    train: &'a TrainingData,
    val: &'a TrainingData,
    config: TrainConfig,
}

impl<'a> NetworkRunner<'a> {
    /// Initializes weights and the batch order from the same seeded stream.
    pub fn new(
        net_config: &NetworkConfig,
        train: &'a TrainingData,
        val: &'a TrainingData,
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::build(net_config, &train.inputs.dims()[1..], &mut rng)?;
        Self::from_network(net, train, val, config, rng)
    }

    pub fn from_network(
        net: Network,
        train: &'a TrainingData,
        val: &'a TrainingData,
        config: &TrainConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if train.len() < 2 || val.is_empty() {
            return Err(Error::Dataset(format!(
                "need at least 2 training and 1 validation samples, got {} and {}",
                train.len(),
                val.len()
            )));
        }
        let adam = AdamState::new(net.parameters().into_iter().map(|(_, t)| t));
        Ok(NetworkRunner {
            net,
            adam,
            rng,
            train,
            val,
            config: config.clone(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    /// One optimizer step on the given rows; returns the batch loss.
    pub fn step(&mut self, rows: &[usize]) -> Result<f64> {
        let x = select_rows(&self.train.inputs, rows)?;
        let y = select_rows(&self.train.targets, rows)?;
        let (pred, cache) = self.net.forward_train(&x)?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let grads = self.net.backward(&cache, &grad)?;
        adam_step(&mut self.net.parameters_mut(), &grads, &mut self.adam, &self.config)?;
        self.net.update_running_stats(&cache);
        Ok(loss)
    }
}

impl EpochRunner for NetworkRunner<'_> {
    type Snapshot = Network;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        let batches = shuffle_batches(self.train.len(), self.config.batch_size, &mut self.rng);
        let (mut sum, mut count) = (0.0, 0);
        for rows in &batches {
            let loss = self.step(rows)?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            sum += loss * rows.len() as f64;
            count += rows.len();
        }
        Ok(sum / count as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        evaluate_loss(&self.net, self.val)
    }

    fn snapshot(&self) -> Network {
        self.net.clone()
    }
}

/// Trains one freshly initialized network with `seed`.
pub fn fit(
    net_config: &NetworkConfig,
    train: &TrainingData,
    val: &TrainingData,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunResult<Network>> {
    let mut runner = NetworkRunner::new(net_config, train, val, config, seed)?;
    fit_with(&mut runner, config, seed)
}
