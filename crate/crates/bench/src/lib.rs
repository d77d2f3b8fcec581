//! Shared fixtures for the benchmarks.

use precipnet::dataio::{generate_synthetic, SyntheticSpec};
use precipnet::experiment::{prepare, PreparedData};
use precipnet::{Experiment, LevelSet, SplitSpec, Tensor, TimeSteps, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(seed: u64, dims: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid dims")
}

/// A year of synthetic 8x8 data arranged for `variant` with ts6 and the v1 levels.
pub fn prepared(variant: Variant) -> PreparedData {
    let days = 365;
    let ds = generate_synthetic(&SyntheticSpec {
        days,
        noise_std: 0.1,
        ..SyntheticSpec::default()
    })
    .expect("valid spec");
    let experiment = Experiment {
        variant,
        time_steps: TimeSteps::Ts6,
        levels: LevelSet::v1(),
        split: SplitSpec::by_fraction(ds.start_date(), days, 0.6, 0.2).expect("valid split"),
    };
    prepare(&ds, &experiment).expect("consistent experiment")
}
