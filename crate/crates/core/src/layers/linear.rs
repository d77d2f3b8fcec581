use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// Fully connected layer `y = x·Wᵀ + b` over `[N, in]` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.dims() != [weight.dims()[0]] {
            return Err(Error::InvalidShape(format!(
                "linear layer needs weight [out, in] and bias [out], got {:?} and {:?}",
                weight.dims(),
                bias.dims()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LinearCache)> {
        let &[n, features] = input.dims() else {
            return Err(Error::InvalidShape(format!(
                "linear layer expects [N, in], got {:?}",
                input.dims()
            )));
        };
        if features != self.in_features() {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.in_features()],
                actual: input.dims().to_vec(),
            });
        }
        let out_f = self.out_features();
        let mut out = vec![0.0; n * out_f];
        for row in out.chunks_mut(out_f) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            n,
            features,
            out_f,
            MatRef::row_major(input.data(), features),
            MatRef::transposed(self.weight.data(), features),
            &mut out,
            true,
        );
        Ok((
            Tensor::from_vec(&[n, out_f], out)?,
            LinearCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &LinearCache, grad_output: &Tensor) -> Result<LinearGrads> {
        let n = cache.input.dims()[0];
        let (in_f, out_f) = (self.in_features(), self.out_features());
        if grad_output.dims() != [n, out_f] {
            return Err(Error::ShapeMismatch {
                expected: vec![n, out_f],
                actual: grad_output.dims().to_vec(),
            });
        }
        let dy = grad_output.data();
        let mut dw = vec![0.0; out_f * in_f];
        // dW = dYᵀ · X
        gemm(
            out_f,
            n,
            in_f,
            MatRef::transposed(dy, out_f),
            MatRef::row_major(cache.input.data(), in_f),
            &mut dw,
            false,
        );
        let mut dx = vec![0.0; n * in_f];
        // dX = dY · W
        gemm(
            n,
            out_f,
            in_f,
            MatRef::row_major(dy, out_f),
            MatRef::row_major(self.weight.data(), in_f),
            &mut dx,
            false,
        );
        let mut db = vec![0.0; out_f];
        for row in dy.chunks(out_f) {
            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        Ok(LinearGrads {
            input: Tensor::from_vec(&[n, in_f], dx)?,
            weight: Tensor::from_vec(&[out_f, in_f], dw)?,
            bias: Tensor::from_vec(&[out_f], db)?,
        })
    }
}
