//! Trained-model directory: `checkpoint.json`, `params.bin` (`PRM1`) and
//! `stats.bin` (`STA1`). Blobs always hold `f64` scalars.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{read_blob, write_blob, ChannelStats, TargetStats};
use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::network::{Network, NetworkConfig};
use crate::tensor::{Precision, Tensor};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const META: &str = "checkpoint.json";
const PARAMS: &str = "params.bin";
const STATS: &str = "stats.bin";
const PARAM_MAGIC: &[u8; 4] = b"PRM1";
const STATS_MAGIC: &[u8; 4] = b"STA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub label: Option<String>,
    pub experiment: Experiment,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub input_shape: Vec<usize>,
    /// Input channels of the first convolution.
    pub channels: usize,
    pub parameter_count: usize,
    pub seed: u64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// State tensors in `params.bin`, in order.
    pub tensors: Vec<TensorEntry>,
    pub stats_shape: [usize; 3],
    pub constant_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
    pub channel_stats: ChannelStats,
    pub target_stats: TargetStats,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: Option<String>,
        experiment: Experiment,
        train: TrainConfig,
        network: Network,
        channel_stats: ChannelStats,
        target_stats: TargetStats,
        seed: u64,
        best_val_loss: f64,
        best_epoch: usize,
    ) -> Self {
        let tensors = network
            .state()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                dims: t.dims().to_vec(),
            })
            .collect();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            label,
            experiment,
            network: network.config().clone(),
            train,
            input_shape: network.input_shape().to_vec(),
            channels: network.input_shape()[0],
            parameter_count: network.parameter_count(),
            seed,
            best_val_loss,
            best_epoch,
            tensors,
            stats_shape: [channel_stats.slots, channel_stats.variables, channel_stats.levels],
            constant_channels: channel_stats
                .constant
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| c.then_some(i))
                .collect(),
        };
        Checkpoint {
            meta,
            network,
            channel_stats,
            target_stats,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params: Vec<f64> = self
            .network
            .state()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect();
        write_blob(&dir.join(PARAMS), PARAM_MAGIC, &params, Precision::Double)?;
        let s = &self.channel_stats;
        let mut stats = vec![self.target_stats.mean, self.target_stats.std];
        stats.extend(&s.mean);
        stats.extend(&s.std);
        write_blob(&dir.join(STATS), STATS_MAGIC, &stats, Precision::Double)?;
        let path = dir.join(META);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported checkpoint version {}", meta.format_version),
            ));
        }
        let mut network = Network::zeroed(&meta.network, &meta.input_shape)
            .map_err(|e| Error::format(&path, format!("cannot rebuild network: {e}")))?;
        let expected: BTreeSet<String> = network.state().into_iter().map(|(n, _)| n).collect();
        let listed: BTreeSet<String> = meta.tensors.iter().map(|t| t.name.clone()).collect();
        if expected != listed || listed.len() != meta.tensors.len() {
            return Err(Error::format(&path, "tensor index does not match the network layout"));
        }
        let total: usize = meta.tensors.iter().map(|t| t.dims.iter().product::<usize>()).sum();
        let values = read_blob(&dir.join(PARAMS), PARAM_MAGIC, total, Precision::Double)?;
        let mut offset = 0;
        for entry in &meta.tensors {
            let n: usize = entry.dims.iter().product();
            let t = Tensor::from_vec(&entry.dims, values[offset..offset + n].to_vec())?;
            network
                .set_state(&entry.name, t)
                .map_err(|e| Error::format(&path, format!("tensor `{}`: {e}", entry.name)))?;
            offset += n;
        }
        if network.parameter_count() != meta.parameter_count || network.input_shape()[0] != meta.channels {
            return Err(Error::format(&path, "parameter count or channel count disagrees with metadata"));
        }

        let [slots, variables, levels] = meta.stats_shape;
        let channels = slots * variables * levels;
        let stats = read_blob(&dir.join(STATS), STATS_MAGIC, 2 + 2 * channels, Precision::Double)?;
        let mut constant = vec![false; channels];
        for &c in &meta.constant_channels {
            *constant
                .get_mut(c)
                .ok_or_else(|| Error::format(&path, format!("constant channel {c} out of range")))? = true;
        }
        let channel_stats = ChannelStats {
            slots,
            variables,
            levels,
            mean: stats[2..2 + channels].to_vec(),
            std: stats[2 + channels..].to_vec(),
            constant,
        };
        Ok(Checkpoint {
            target_stats: TargetStats {
                mean: stats[0],
                std: stats[1],
            },
            channel_stats,
            network,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelizer::{LevelSet, TimeSteps};
    use crate::dataio::SplitSpec;
    use crate::network::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint(variant: Variant) -> Checkpoint {
        let config = NetworkConfig {
            conv_channels: [2, 3],
            fc_hidden: 5,
            ..NetworkConfig::with_variant(variant)
        };
        let shape: Vec<usize> = match variant {
            Variant::Cnn2d => vec![8, 4, 4],
            _ => vec![4, 2, 4, 4],
        };
        let mut net = Network::build(&config, &shape, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        net.set_state("bn1.running_var", Tensor::from_vec(&[2], vec![0.3, 2.5]).unwrap())
            .unwrap();
        let stats = ChannelStats {
            slots: 4,
            variables: 2,
            levels: 2,
            mean: (0..16).map(|i| i as f64 * 1.1).collect(),
            std: (0..16).map(|i| 1.0 + i as f64 / 7.0).collect(),
            constant: (0..16).map(|i| i == 3).collect(),
        };
        Checkpoint::new(
            Some("T1-2D".into()),
            Experiment {
                variant,
                time_steps: TimeSteps::Ts2,
                levels: LevelSet::new(vec![500.0, 925.0]).unwrap(),
                split: SplitSpec::default(),
            },
            TrainConfig::default(),
            net,
            stats,
            TargetStats { mean: 3.3, std: 1.0 / 3.0 },
            17,
            0.123456789,
            12,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let dir = tempfile::tempdir().unwrap();
            let ck = checkpoint(variant);
            ck.save(dir.path()).unwrap();
            let back = Checkpoint::load(dir.path()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn corruption_rejected() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint(Variant::Cnn2d).save(dir.path()).unwrap();
        let params = dir.path().join(PARAMS);
        let bytes = fs::read(&params).unwrap();
        fs::write(&params, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Checkpoint::load(dir.path()).unwrap_err().to_string().contains("truncated"));
        fs::write(&params, &bytes).unwrap();

        let meta = dir.path().join(META);
        let text = fs::read_to_string(&meta).unwrap();
        fs::write(&meta, text.replace("\"fc1.weight\"", "\"fc9.weight\"")).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
        fs::write(&meta, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Json { .. })));
    }
}
