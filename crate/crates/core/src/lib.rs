//! Convolutional networks that estimate daily basin-average precipitation
//! from gridded atmospheric fields, with 2D, time-3D and vertical-3D input
//! layouts, trained and evaluated end to end in `f64`.

pub mod channelizer;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use channelizer::{LevelSet, TimeSteps};
pub use checkpoint::Checkpoint;
pub use dataio::{AtmosDataset, SplitSpec};
pub use error::{Error, Result};
pub use experiment::Experiment;
pub use metrics::EvalReport;
pub use network::{Network, NetworkConfig, Variant};
pub use tensor::{Precision, Shape, Tensor};
pub use trainer::TrainConfig;
