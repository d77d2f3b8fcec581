//! Differentiable layer primitives.
//!
//! Every layer exposes a forward pass that returns its output together with
//! the cache its backward pass consumes. Parameters are plain tensors owned by
//! the layer; nothing is mutated during forward or backward.

mod batchnorm;
mod conv;
mod linear;
mod pool;

pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::{conv_output_len, Conv2d, Conv3d, ConvCache, ConvGrads};
pub use linear::{Linear, LinearCache, LinearGrads};
pub use pool::{MaxPool, PoolCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    #[default]
    Relu,
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_vec(input.dims(), data).expect("same shape")
}

/// Masks `grad_output` by `input > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    if input.dims() != grad_output.dims() {
        return Err(Error::ShapeMismatch {
            expected: input.dims().to_vec(),
            actual: grad_output.dims().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.dims(), data)
}
