use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::AtmosDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean and standard deviation per (slot, variable, level) channel, indexed
/// `(s·V + v)·L + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub slots: usize,
    pub variables: usize,
    pub levels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels with zero spread; their std is stored as 1.
    pub constant: Vec<bool>,
}

impl ChannelStats {
    /// Population statistics over the days in `train`, all grid cells pooled.
    pub fn compute(dataset: &AtmosDataset, train: Range<usize>) -> Result<Self> {
        let dims = dataset.dims();
        if train.is_empty() || train.end > dims.days {
            return Err(Error::Dataset(format!(
                "training range {train:?} is empty or outside {} days",
                dims.days
            )));
        }
        let channels = dims.slots * dims.variables * dims.levels;
        let plane = dims.height * dims.width;
        let data = dataset.stack().data();
        let mut count = 0.0;
        let mut mean = vec![0.0; channels];
        let mut m2 = vec![0.0; channels];
        // Welford, one grid cell at a time
        for day in train {
            for ch in 0..channels {
                let start = (day * channels + ch) * plane;
                let mut n = count;
                for &x in &data[start..start + plane] {
                    n += 1.0;
                    let delta = x - mean[ch];
                    mean[ch] += delta / n;
                    m2[ch] += delta * (x - mean[ch]);
                }
            }
            count += plane as f64;
        }
        let mut std = Vec::with_capacity(channels);
        let mut constant = Vec::with_capacity(channels);
        for (ch, m) in m2.iter().enumerate() {
            let s = (m / count).sqrt();
            let flat = !(s > 1e-12 * (1.0 + mean[ch].abs()));
            constant.push(flat);
            std.push(if flat { 1.0 } else { s });
        }
        Ok(ChannelStats {
            slots: dims.slots,
            variables: dims.variables,
            levels: dims.levels,
            mean,
            std,
            constant,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Applies `(x − mean) / std` per channel to a `[D, S, V, L, H, W]` stack.
/// Constant channels become exactly zero.
pub fn standardize(stack: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    let dims = stack.dims();
    if dims.len() != 6 || dims[1..4] != [stats.slots, stats.variables, stats.levels] {
        return Err(Error::ShapeMismatch {
            expected: vec![stats.slots, stats.variables, stats.levels],
            actual: dims.to_vec(),
        });
    }
    let plane = dims[4] * dims[5];
    let channels = stats.channels();
    let mut out = stack.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % channels;
        if stats.constant[ch] {
            chunk.fill(0.0);
        } else {
            let (m, s) = (stats.mean[ch], stats.std[ch]);
            chunk.iter_mut().for_each(|x| *x = (*x - m) / s);
        }
    }
    Ok(out)
}

/// z-scoring of the daily targets; metrics are always reported in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn compute(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Dataset("no training targets".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(TargetStats {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn standardize(&self, mm: f64) -> f64 {
        (mm - self.mean) / self.std
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelizer::LevelSet;
    use crate::tensor::Precision;
    use chrono::NaiveDate;

    fn dataset(days: usize, f: impl Fn(usize) -> f64) -> AtmosDataset {
        let dims = [days, 4, 2, 3, 2, 3];
        let n: usize = dims.iter().product();
        AtmosDataset::new(
            Tensor::from_vec(&dims, (0..n).map(f).collect()).unwrap(),
            vec![1.0; days],
            NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            vec!["q".into(), "t".into()],
            LevelSet::new(vec![500.0, 850.0, 925.0]).unwrap(),
            Precision::Double,
        )
        .unwrap()
    }

    /// Two-pass mean and population std for channel `ch` over `days`.
    fn two_pass(ds: &AtmosDataset, days: Range<usize>, ch: usize) -> (f64, f64) {
        let plane = 6;
        let channels = 24;
        let values: Vec<f64> = days
            .flat_map(|d| {
                let s = (d * channels + ch) * plane;
                ds.stack().data()[s..s + plane].to_vec()
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn matches_two_pass_oracle() {
        let ds = dataset(7, |i| ((i * 7919) % 1013) as f64 * 0.37 + 250.0);
        let stats = ChannelStats::compute(&ds, 1..5).unwrap();
        for ch in 0..24 {
            let (m, s) = two_pass(&ds, 1..5, ch);
            assert!((stats.mean[ch] - m).abs() <= 1e-10, "mean ch {ch}");
            assert!((stats.std[ch] - s).abs() <= 1e-10, "std ch {ch}");
        }
    }

    #[test]
    fn standardized_training_channels_are_unit() {
        let ds = dataset(6, |i| (i as f64 * 0.13).sin() * 40.0 + 300.0);
        let stats = ChannelStats::compute(&ds, 0..4).unwrap();
        let z = standardize(ds.stack(), &stats).unwrap();
        let zs = AtmosDataset::new(
            z,
            vec![1.0; 6],
            ds.start_date(),
            ds.variables().to_vec(),
            ds.levels().clone(),
            Precision::Double,
        )
        .unwrap();
        let again = ChannelStats::compute(&zs, 0..4).unwrap();
        for ch in 0..24 {
            assert!(again.mean[ch].abs() <= 1e-6);
            assert!((again.std[ch] - 1.0).abs() <= 1e-6);
        }
        // idempotent up to rounding
        let twice = standardize(zs.stack(), &again).unwrap();
        for (a, b) in twice.data().iter().zip(zs.stack().data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_is_flagged_and_zeroed() {
        let ds = dataset(3, |i| if (i / 6) % 24 == 5 { 7.5 } else { i as f64 });
        let stats = ChannelStats::compute(&ds, 0..3).unwrap();
        assert!(stats.constant[5]);
        assert_eq!(stats.std[5], 1.0);
        assert_eq!(stats.constant.iter().filter(|c| **c).count(), 1);
        let z = standardize(ds.stack(), &stats).unwrap();
        assert!(z.data()[5 * 6..6 * 6].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_range_rejected() {
        let ds = dataset(3, |i| i as f64);
        assert!(ChannelStats::compute(&ds, 2..2).is_err());
        assert!(ChannelStats::compute(&ds, 0..4).is_err());
    }

    #[test]
    fn target_round_trip() {
        let t = TargetStats::compute(&[0.0, 10.0, 20.0]).unwrap();
        assert!((t.mean - 10.0).abs() < 1e-15);
        assert!((t.unstandardize(t.standardize(13.7)) - 13.7).abs() < 1e-12);
        assert_eq!(TargetStats::compute(&[2.0, 2.0]).unwrap().std, 1.0);
    }
}
