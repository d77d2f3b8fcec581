use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};

/// What the early-stopping loop needs from a model under training.
pub trait EpochRunner {
    type Snapshot: Clone + Send;

    /// Runs one pass over the training data and returns its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;

    /// Validation loss of the current parameters.
    fn validate(&mut self) -> Result<f64>;

    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub seed: u64,
    pub best_val_loss: f64,
    /// 0-based epoch of the lowest validation loss.
    pub best_epoch: usize,
    pub snapshot: S,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub epochs_run: usize,
    /// Why the run diverged, if it did.
    pub failed: Option<String>,
    pub wall_time_secs: f64,
}

/// Serializable run record without the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub failed: Option<String>,
    pub wall_time_secs: f64,
}

impl<S> RunResult<S> {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            seed: self.seed,
            best_val_loss: self.best_val_loss.is_finite().then_some(self.best_val_loss),
            best_epoch: self.best_epoch,
            epochs_run: self.epochs_run,
            failed: self.failed.clone(),
            wall_time_secs: self.wall_time_secs,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }
}

/// Trains until the validation loss has gone more than `patience_epochs`
/// epochs without a new minimum, or `max_epochs` is reached, and returns the
/// snapshot taken at the best epoch.
///
/// A non-finite loss or gradient marks the run failed instead of erroring.
pub fn fit_with<R: EpochRunner>(
    runner: &mut R,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunResult<R::Snapshot>> {
    config.validate()?;
    let started = Instant::now();
    let mut result = RunResult {
        seed,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        snapshot: runner.snapshot(),
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        epochs_run: 0,
        failed: None,
        wall_time_secs: 0.0,
    };
    for epoch in 0..config.max_epochs {
        let losses = runner
            .train_epoch(epoch)
            .and_then(|train| Ok((train, runner.validate()?)));
        let (train, val) = match losses {
            Ok(pair) => pair,
            Err(Error::NonFiniteGradient(name)) => {
                result.failed = Some(format!("non-finite gradient for `{name}` in epoch {epoch}"));
                break;
            }
            Err(e) => return Err(e),
        };
        result.train_losses.push(train);
        result.val_losses.push(val);
        result.epochs_run = epoch + 1;
        if !train.is_finite() || !val.is_finite() {
            result.failed = Some(format!(
                "non-finite loss in epoch {epoch} (train {train}, validation {val})"
            ));
            break;
        }
        if val < result.best_val_loss {
            result.best_val_loss = val;
            result.best_epoch = epoch;
            result.snapshot = runner.snapshot();
        }
        if epoch - result.best_epoch > config.patience_epochs {
            break;
        }
    }
    if result.failed.is_none() && !result.best_val_loss.is_finite() {
        result.failed = Some("no finite validation loss was recorded".into());
    }
    result.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Index of the lowest `best_val_loss` among runs that did not fail; ties go
/// to the lowest index.
pub fn select_best<S>(runs: &[RunResult<S>]) -> Result<usize> {
    runs.iter()
        .enumerate()
        .filter(|(_, r)| !r.is_failed() && r.best_val_loss.is_finite())
        .min_by(|(i, a), (j, b)| a.best_val_loss.total_cmp(&b.best_val_loss).then(i.cmp(j)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Diverged(format!("all {} runs failed", runs.len())))
}

/// Runs `config.restarts` independent fits, run `i` seeded with
/// `base_seed + i`, on a pool of `jobs` threads. Returns the selected index and
/// every run in index order.
pub fn multi_restart_fit<R, B>(
    build: B,
    config: &TrainConfig,
    jobs: usize,
) -> Result<(usize, Vec<RunResult<R::Snapshot>>)>
where
    R: EpochRunner,
    R::Snapshot: Send,
    B: Fn(u64) -> Result<R> + Sync,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} worker threads: {e}")))?;
    let seeds: Vec<u64> = (0..config.restarts as u64)
        .map(|i| config.base_seed.wrapping_add(i))
        .collect();
    let runs = pool.install(|| {
        seeds
            .par_iter()
            .with_max_len(1)
            .map(|&seed| {
                let mut runner = build(seed)?;
                fit_with(&mut runner, config, seed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = select_best(&runs)?;
    Ok((best, runs))
}
