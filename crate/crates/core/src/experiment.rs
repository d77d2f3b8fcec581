//! From a dataset and an experiment definition to training tensors, and from
//! a trained checkpoint back to metrics in mm.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::channelizer::{assemble_batch, make_windows_in, InputBatch, Layout, LevelSet, TimeSteps};
use crate::checkpoint::Checkpoint;
use crate::dataio::{standardize, AtmosDataset, ChannelStats, Period, SplitIndices, SplitSpec, TargetStats};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, PeriodMetrics};
use crate::network::Variant;
use crate::tensor::Tensor;
use crate::trainer::{evaluate_loss, TrainingData};

/// Which slice of the dataset an experiment uses and how it is arranged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub variant: Variant,
    pub time_steps: TimeSteps,
    /// Subset of the dataset's levels fed to the network.
    pub levels: LevelSet,
    pub split: SplitSpec,
}

impl Experiment {
    pub fn layout(&self, dataset: &AtmosDataset) -> Layout {
        let dims = dataset.dims();
        Layout {
            variant: self.variant,
            time_steps: self.time_steps,
            variables: dims.variables,
            levels: self.levels.clone(),
            height: dims.height,
            width: dims.width,
        }
    }
}

/// One period's samples: channelized inputs, targets in mm and in
/// standardized units.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub batch: InputBatch,
    pub data: TrainingData,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub layout: Layout,
    pub level_indices: Vec<usize>,
    pub split: SplitIndices,
    pub channel_stats: ChannelStats,
    pub target_stats: TargetStats,
    pub train: PeriodData,
    pub validation: PeriodData,
    pub test: PeriodData,
}

impl PreparedData {
    pub fn period(&self, period: Period) -> &PeriodData {
        match period {
            Period::Train => &self.train,
            Period::Validation => &self.validation,
            Period::Test => &self.test,
        }
    }
}

/// Splits, fits standardization on the training period only, and builds the
/// three period batches.
pub fn prepare(dataset: &AtmosDataset, experiment: &Experiment) -> Result<PreparedData> {
    let split = experiment.split.indices(dataset)?;
    let channel_stats = ChannelStats::compute(dataset, split.train.clone())?;
    let target_stats = TargetStats::compute(&dataset.targets()[split.train.clone()])?;
    prepare_with(dataset, experiment, channel_stats, target_stats)
}

/// Like [`prepare`] but with statistics fixed in advance (e.g. from a checkpoint).
pub fn prepare_with(
    dataset: &AtmosDataset,
    experiment: &Experiment,
    channel_stats: ChannelStats,
    target_stats: TargetStats,
) -> Result<PreparedData> {
    let dims = dataset.dims();
    if [channel_stats.slots, channel_stats.variables, channel_stats.levels]
        != [dims.slots, dims.variables, dims.levels]
    {
        return Err(Error::ShapeMismatch {
            expected: vec![channel_stats.slots, channel_stats.variables, channel_stats.levels],
            actual: vec![dims.slots, dims.variables, dims.levels],
        });
    }
    let split = experiment.split.indices(dataset)?;
    let level_indices = dataset.levels().indices_of(&experiment.levels)?;
    let layout = experiment.layout(dataset);
    let stack = standardize(dataset.stack(), &channel_stats)?;
    let build = |period: Period| -> Result<PeriodData> {
        let windows = make_windows_in(split.period(period), experiment.time_steps)
            .map_err(|e| Error::Dataset(format!("{period} period: {e}")))?;
        let batch = assemble_batch(&stack, dataset.targets(), &windows, &layout, &level_indices)?;
        let z: Vec<f64> = batch.targets.data().iter().map(|&y| target_stats.standardize(y)).collect();
        let data = TrainingData::new(batch.inputs.clone(), Tensor::from_vec(&[z.len()], z)?)?;
        Ok(PeriodData { batch, data })
    };
    Ok(PreparedData {
        train: build(Period::Train)?,
        validation: build(Period::Validation)?,
        test: build(Period::Test)?,
        layout,
        level_indices,
        split,
        channel_stats,
        target_stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPredictions {
    pub period: Period,
    pub dates: Vec<NaiveDate>,
    pub obs_mm: Vec<f64>,
    pub pred_mm: Vec<f64>,
    /// MSE in standardized target units, as used during training.
    pub standardized_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub periods: Vec<PeriodPredictions>,
}

impl Evaluation {
    pub fn period(&self, period: Period) -> &PeriodPredictions {
        self.periods
            .iter()
            .find(|p| p.period == period)
            .expect("all periods evaluated")
    }
}

/// Runs a checkpoint over all three periods of `dataset` (inference mode) and
/// reports metrics in mm. `clamp` floors predictions at zero.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &AtmosDataset, clamp: bool) -> Result<Evaluation> {
    let experiment = &checkpoint.meta.experiment;
    let prepared = prepare_with(
        dataset,
        experiment,
        checkpoint.channel_stats.clone(),
        checkpoint.target_stats,
    )?;
    let expected = checkpoint.network.input_shape();
    if prepared.layout.input_shape() != expected {
        return Err(Error::Dataset(format!(
            "checkpoint expects inputs {:?} but the dataset yields {:?}",
            expected,
            prepared.layout.input_shape()
        )));
    }
    let mut periods = Vec::with_capacity(3);
    let mut metrics = Vec::with_capacity(3);
    for period in Period::ALL {
        let pd = prepared.period(period);
        let z = predict_chunked(checkpoint, &pd.data.inputs)?;
        let pred_mm: Vec<f64> = z.iter().map(|&v| prepared.target_stats.unstandardize(v)).collect();
        let obs_mm = pd.batch.targets.data().to_vec();
        metrics.push(PeriodMetrics::compute(&pred_mm, &obs_mm, clamp)?);
        periods.push(PeriodPredictions {
            period,
            dates: pd.batch.days.iter().map(|&d| dataset.date_of(d)).collect(),
            obs_mm,
            pred_mm,
            standardized_loss: evaluate_loss(&checkpoint.network, &pd.data)?,
        });
    }
    Ok(Evaluation {
        report: EvalReport {
            train: metrics[0],
            validation: metrics[1],
            test: metrics[2],
        },
        periods,
    })
}

fn predict_chunked(checkpoint: &Checkpoint, inputs: &Tensor) -> Result<Vec<f64>> {
    let n = inputs.dims()[0];
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        let x = crate::trainer::select_rows(inputs, &idx)?;
        out.extend_from_slice(checkpoint.network.predict(&x)?.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};

    fn dataset() -> AtmosDataset {
        generate_synthetic(&SyntheticSpec {
            days: 40,
            levels: LevelSet::v2(),
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn experiment(ds: &AtmosDataset, time_steps: TimeSteps) -> Experiment {
        Experiment {
            variant: Variant::Cnn3dVert,
            time_steps,
            levels: LevelSet::v1(),
            split: SplitSpec::by_fraction(ds.start_date(), 40, 0.5, 0.25).unwrap(),
        }
    }

    #[test]
    fn shapes_and_counts() {
        let ds = dataset();
        let p = prepare(&ds, &experiment(&ds, TimeSteps::Ts6)).unwrap();
        assert_eq!(p.level_indices, vec![1, 2, 3, 4, 5]);
        assert_eq!(p.train.batch.inputs.dims(), &[18, 24, 5, 8, 8]);
        assert_eq!(p.validation.data.len(), 8);
        assert_eq!(p.test.data.len(), 8);
        // ts6 windows stay inside each period
        assert_eq!(p.validation.batch.days.first(), Some(&21));
        assert_eq!(p.validation.batch.days.last(), Some(&28));
    }

    #[test]
    fn targets_standardized_on_train() {
        let ds = dataset();
        let p = prepare(&ds, &experiment(&ds, TimeSteps::Ts2)).unwrap();
        let z = p.train.data.targets.data();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        for (zi, yi) in z.iter().zip(p.train.batch.targets.data()) {
            assert!((p.target_stats.unstandardize(*zi) - yi).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_shape_checked() {
        let ds = dataset();
        let p = prepare(&ds, &experiment(&ds, TimeSteps::Ts2)).unwrap();
        let mut stats = p.channel_stats.clone();
        stats.levels = 5;
        assert!(prepare_with(&ds, &experiment(&ds, TimeSteps::Ts2), stats, p.target_stats).is_err());
    }

    #[test]
    fn missing_levels_rejected() {
        let ds = dataset();
        let exp = Experiment {
            levels: LevelSet::v3(),
            ..experiment(&ds, TimeSteps::Ts2)
        };
        assert!(matches!(prepare(&ds, &exp), Err(Error::Dataset(_))));
    }
}
