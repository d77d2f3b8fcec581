//! Per-channel batch normalization for `[N, C, ...]` inputs.

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Training-mode forward state.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    dims: Vec<usize>,
}

impl BatchNormCache {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNorm {
    /// γ = 1, β = 0, running statistics (0, 1).
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::full(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// (batch size, channels, elements per channel per sample)
    fn layout(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let dims = input.dims();
        if dims.len() < 2 || dims[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.channels()],
                actual: dims.to_vec(),
            });
        }
        Ok((dims[0], dims[1], dims[2..].iter().product()))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchNormCache>)> {
        match mode {
            Mode::Inference => Ok((self.forward_inference(input)?, None)),
            Mode::Training => {
                let (y, cache) = self.forward_training(input)?;
                Ok((y, Some(cache)))
            }
        }
    }

    pub fn forward_inference(&self, input: &Tensor) -> Result<Tensor> {
        let (n, c, inner) = self.layout(input)?;
        let mut out = input.clone();
        let y = out.data_mut();
        for ch in 0..c {
            let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
            let (g, b, mu) = (
                self.gamma.data()[ch],
                self.beta.data()[ch],
                self.running_mean.data()[ch],
            );
            for s in 0..n {
                let start = (s * c + ch) * inner;
                for v in &mut y[start..start + inner] {
                    *v = g * (*v - mu) * inv + b;
                }
            }
        }
        Ok(out)
    }

    pub fn forward_training(&self, input: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (n, c, inner) = self.layout(input)?;
        if n < 2 {
            return Err(Error::invalid(format!(
                "batch normalization in training mode needs at least 2 samples, got {n}"
            )));
        }
        let x = input.data();
        let count = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let plane = |s: usize| &x[(s * c + ch) * inner..(s * c + ch + 1) * inner];
            let mu = (0..n).map(|s| plane(s).iter().sum::<f64>()).sum::<f64>() / count;
            let v = (0..n)
                .map(|s| plane(s).iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>())
                .sum::<f64>()
                / count;
            mean[ch] = mu;
            var[ch] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * inner;
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for i in start..start + inner {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = xh;
                    y[i] = g * xh + b;
                }
            }
        }
        Ok((
            Tensor::from_vec(input.dims(), y)?,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                dims: input.dims().to_vec(),
            },
        ))
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running_stats(&mut self, cache: &BatchNormCache) {
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_output: &Tensor) -> Result<BatchNormGrads> {
        if grad_output.dims() != cache.dims.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: cache.dims.clone(),
                actual: grad_output.dims().to_vec(),
            });
        }
        let (n, c, inner) = self.layout(grad_output)?;
        let dy = grad_output.data();
        let count = (n * inner) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * inner;
                for i in start..start + inner {
                    dgamma[ch] += dy[i] * cache.x_hat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }
        // dx = γ/(m·σ) · (m·dy − Σdy − x̂·Σ(dy·x̂))
        let mut dx = vec![0.0; dy.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * inner;
                let scale = self.gamma.data()[ch] * cache.inv_std[ch] / count;
                for i in start..start + inner {
                    dx[i] = scale * (count * dy[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch]);
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_vec(&cache.dims, dx)?,
            gamma: Tensor::from_vec(&[c], dgamma)?,
            beta: Tensor::from_vec(&[c], dbeta)?,
        })
    }
}
