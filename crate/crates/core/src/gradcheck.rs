//! Central finite-difference checks of every backward pass.
//!
//! Each layer check uses the scalar loss `Σ w ⊙ layer(x)` for a random fixed
//! `w`, so the upstream gradient is `w`. The error of one gradient tensor is
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-6)`, and an instance
//! reports the worst over its input and parameter gradients. Whole-network
//! checks use the MSE loss and measure the error over all parameter gradients
//! concatenated, since some of them (a convolution bias feeding batch
//! normalization) are exactly zero and only finite-difference noise remains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::{relu_backward, relu_forward, BatchNorm, Conv2d, Conv3d, Linear, MaxPool};
use crate::network::{Network, NetworkConfig, Variant};
use crate::tensor::Tensor;
use crate::trainer::mse_loss;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            instances: 20,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element of `x`.
pub fn central_difference(
    x: &Tensor,
    h: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn dot(a: &Tensor, w: &Tensor) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("non-empty dims")
}

/// Distinct values at least 1e-3 apart, so no finite-difference step can
/// reorder them.
fn distinct(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(dims, v).expect("non-empty dims")
}

/// Values bounded away from zero.
fn off_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let mut t = uniform(rng, dims, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

struct Check<'a> {
    h: f64,
    worst: &'a mut f64,
}

impl Check<'_> {
    fn compare(&mut self, analytic: &Tensor, x: &Tensor, f: impl FnMut(&Tensor) -> Result<f64>) -> Result<()> {
        let numeric = central_difference(x, self.h, f)?;
        *self.worst = self.worst.max(relative_error(analytic.data(), &numeric));
        Ok(())
    }
}

fn conv2d_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let (n, m, p) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let k = rng.random_range(1..=3);
    let (stride, padding) = (rng.random_range(1..=2), rng.random_range(0..=1));
    let (hh, ww) = (rng.random_range(k..=5), rng.random_range(k..=5));
    let layer = Conv2d::new(uniform(rng, &[p, m, k, k], -1.0, 1.0), uniform(rng, &[p], -1.0, 1.0), stride, padding)?;
    let x = uniform(rng, &[n, m, hh, ww], -1.0, 1.0);
    let (y, cache) = layer.forward(&x)?;
    let w = uniform(rng, y.dims(), -1.0, 1.0);
    let g = layer.backward(&cache, &w)?;
    c.compare(&g.input, &x, |x| Ok(dot(&layer.forward(x)?.0, &w)))?;
    c.compare(&g.kernels, &layer.kernels, |k| {
        let l = Conv2d::new(k.clone(), layer.bias.clone(), stride, padding)?;
        Ok(dot(&l.forward(&x)?.0, &w))
    })?;
    c.compare(&g.bias, &layer.bias, |b| {
        let l = Conv2d::new(layer.kernels.clone(), b.clone(), stride, padding)?;
        Ok(dot(&l.forward(&x)?.0, &w))
    })
}

fn conv3d_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let (n, m, p) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
    let k = rng.random_range(1..=3);
    let (stride, padding) = (rng.random_range(1..=2), rng.random_range(0..=1));
    let d = rng.random_range(k.max(1)..=4);
    let (hh, ww) = (rng.random_range(k..=4), rng.random_range(k..=4));
    let layer = Conv3d::new(
        uniform(rng, &[p, m, k, k, k], -1.0, 1.0),
        uniform(rng, &[p], -1.0, 1.0),
        stride,
        padding,
    )?;
    let x = uniform(rng, &[n, m, d, hh, ww], -1.0, 1.0);
    let (y, cache) = layer.forward(&x)?;
    let w = uniform(rng, y.dims(), -1.0, 1.0);
    let g = layer.backward(&cache, &w)?;
    c.compare(&g.input, &x, |x| Ok(dot(&layer.forward(x)?.0, &w)))?;
    c.compare(&g.kernels, &layer.kernels, |k| {
        let l = Conv3d::new(k.clone(), layer.bias.clone(), stride, padding)?;
        Ok(dot(&l.forward(&x)?.0, &w))
    })?;
    c.compare(&g.bias, &layer.bias, |b| {
        let l = Conv3d::new(layer.kernels.clone(), b.clone(), stride, padding)?;
        Ok(dot(&l.forward(&x)?.0, &w))
    })
}

fn pool_instance(rng: &mut ChaCha8Rng, c: &mut Check, rank: usize) -> Result<()> {
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let mut dims = vec![rng.random_range(1..=2), rng.random_range(1..=2)];
    dims.extend((0..rank).map(|_| rng.random_range(k..=5)));
    let pool = MaxPool::new(vec![k; rank], stride)?;
    let x = distinct(rng, &dims);
    let (y, cache) = pool.forward(&x)?;
    let w = uniform(rng, y.dims(), -1.0, 1.0);
    let g = pool.backward(&cache, &w)?;
    c.compare(&g, &x, |x| Ok(dot(&pool.forward(x)?.0, &w)))
}

fn batchnorm_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let ch = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=4), ch];
    dims.extend((0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=3)));
    let mut bn = BatchNorm::new(ch)?;
    bn.gamma = uniform(rng, &[ch], 0.5, 1.5);
    bn.beta = uniform(rng, &[ch], -0.5, 0.5);
    let x = uniform(rng, &dims, -2.0, 2.0);
    let (y, cache) = bn.forward_training(&x)?;
    let w = uniform(rng, y.dims(), -1.0, 1.0);
    let g = bn.backward(&cache, &w)?;
    c.compare(&g.input, &x, |x| Ok(dot(&bn.forward_training(x)?.0, &w)))?;
    c.compare(&g.gamma, &bn.gamma, |gamma| {
        let l = BatchNorm { gamma: gamma.clone(), ..bn.clone() };
        Ok(dot(&l.forward_training(&x)?.0, &w))
    })?;
    c.compare(&g.beta, &bn.beta, |beta| {
        let l = BatchNorm { beta: beta.clone(), ..bn.clone() };
        Ok(dot(&l.forward_training(&x)?.0, &w))
    })
}

fn linear_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let (n, i, o) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=4));
    let layer = Linear::new(uniform(rng, &[o, i], -1.0, 1.0), uniform(rng, &[o], -1.0, 1.0))?;
    let x = uniform(rng, &[n, i], -1.0, 1.0);
    let (y, cache) = layer.forward(&x)?;
    let w = uniform(rng, y.dims(), -1.0, 1.0);
    let g = layer.backward(&cache, &w)?;
    c.compare(&g.input, &x, |x| Ok(dot(&layer.forward(x)?.0, &w)))?;
    c.compare(&g.weight, &layer.weight, |wt| {
        Ok(dot(&Linear::new(wt.clone(), layer.bias.clone())?.forward(&x)?.0, &w))
    })?;
    c.compare(&g.bias, &layer.bias, |b| {
        Ok(dot(&Linear::new(layer.weight.clone(), b.clone())?.forward(&x)?.0, &w))
    })
}

fn relu_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let n = rng.random_range(1..=20);
    let x = off_zero(rng, &[n]);
    let w = uniform(rng, &[n], -1.0, 1.0);
    let g = relu_backward(&x, &w)?;
    c.compare(&g, &x, |x| Ok(dot(&relu_forward(x), &w)))
}

fn mse_instance(rng: &mut ChaCha8Rng, c: &mut Check) -> Result<()> {
    let n = rng.random_range(1..=10);
    let (pred, target) = (uniform(rng, &[n], -2.0, 2.0), uniform(rng, &[n], -2.0, 2.0));
    let (_, g) = mse_loss(&pred, &target)?;
    c.compare(&g, &pred, |p| Ok(mse_loss(p, &target)?.0))
}

/// A small network of `variant` small enough to check every parameter.
pub fn tiny_network(variant: Variant, rng: &mut ChaCha8Rng) -> Result<Network> {
    let config = NetworkConfig {
        conv_channels: [2, 2],
        fc_hidden: 4,
        ..NetworkConfig::with_variant(variant)
    };
    let shape: &[usize] = match variant {
        Variant::Cnn2d => &[3, 6, 6],
        Variant::Cnn3dTime | Variant::Cnn3dVert => &[2, 3, 6, 6],
    };
    Network::build(&config, shape, rng)
}

fn network_instance(rng: &mut ChaCha8Rng, c: &mut Check, variant: Variant) -> Result<()> {
    let net = tiny_network(variant, rng)?;
    let n = 3;
    let mut dims = vec![n];
    dims.extend(net.input_shape());
    let x = uniform(rng, &dims, -1.0, 1.0);
    let y = uniform(rng, &[n], -1.0, 1.0);
    let (pred, cache) = net.forward_train(&x)?;
    let (_, dpred) = mse_loss(&pred, &y)?;
    let grads = net.backward(&cache, &dpred)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, ((_, param), g)) in net.parameters().into_iter().zip(&grads).enumerate() {
        analytic.extend_from_slice(g.data());
        numeric.extend(central_difference(param, c.h, |p| {
            let mut probe = net.clone();
            *probe.parameters_mut()[i].1 = p.clone();
            Ok(mse_loss(&probe.forward_train(&x)?.0, &y)?.0)
        })?);
    }
    *c.worst = c.worst.max(relative_error(&analytic, &numeric));
    Ok(())
}

type Case = fn(&mut ChaCha8Rng, &mut Check) -> Result<()>;

/// Runs every check and returns one result per layer kind and network variant.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let cases: Vec<(&str, Case)> = vec![
        ("conv2d", conv2d_instance),
        ("conv3d", conv3d_instance),
        ("maxpool2d", |r, c| pool_instance(r, c, 2)),
        ("maxpool3d", |r, c| pool_instance(r, c, 3)),
        ("batchnorm", batchnorm_instance),
        ("linear", linear_instance),
        ("relu", relu_instance),
        ("mse", mse_instance),
        ("network-2d", |r, c| network_instance(r, c, Variant::Cnn2d)),
        ("network-3d-time", |r, c| network_instance(r, c, Variant::Cnn3dTime)),
        ("network-3d-vert", |r, c| network_instance(r, c, Variant::Cnn3dVert)),
    ];
    let mut results = Vec::with_capacity(cases.len());
    for (k, (name, case)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(k as u64 * 1_000_003));
        let mut worst = 0.0f64;
        for _ in 0..options.instances {
            let mut check = Check {
                h: options.step,
                worst: &mut worst,
            };
            case(&mut rng, &mut check)?;
        }
        results.push(CheckResult {
            name: name.to_string(),
            instances: options.instances,
            max_rel_error: worst,
            passed: worst <= options.tolerance,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((relative_error(&[0.0], &[1e-11]) - 1e-5).abs() < 1e-15);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_cubic() {
        let x = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let g = central_difference(&x, 1e-5, |t| Ok(t.data().iter().map(|v| v.powi(3)).sum())).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 12.0).abs() < 1e-8);
    }

    #[test]
    fn quick_run_passes() {
        let results = run_gradcheck(&GradcheckOptions {
            instances: 2,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(results.len(), 11);
        for r in &results {
            assert!(r.passed, "{} {}", r.name, r.max_rel_error);
        }
    }
}
