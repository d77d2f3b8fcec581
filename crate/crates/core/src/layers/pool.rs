//! Max pooling over 2 or 3 spatial axes (no padding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool {
    /// Window length per spatial axis; its length (2 or 3) fixes the layer rank.
    pub kernel: Vec<usize>,
    pub stride: usize,
}

/// Argmax positions recorded by a forward pass, as flat offsets into the input.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dims: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool {
    pub fn new(kernel: Vec<usize>, stride: usize) -> Result<Self> {
        if !(2..=3).contains(&kernel.len()) {
            return Err(Error::invalid(format!(
                "max pooling supports 2 or 3 spatial axes, got {}",
                kernel.len()
            )));
        }
        if kernel.contains(&0) || stride == 0 {
            return Err(Error::invalid("pool kernel and stride must be at least 1"));
        }
        Ok(MaxPool { kernel, stride })
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = self.kernel.len();
        if input.len() != spatial + 2 {
            return Err(Error::InvalidShape(format!(
                "{spatial}D max pooling expects a rank-{} input, got {input:?}",
                spatial + 2
            )));
        }
        let mut out = input[..2].to_vec();
        for (&len, &k) in input[2..].iter().zip(&self.kernel) {
            if len < k {
                return Err(Error::InvalidShape(format!(
                    "pool window {:?} larger than input {input:?}",
                    self.kernel
                )));
            }
            out.push((len - k) / self.stride + 1);
        }
        Ok(out)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache)> {
        let out_dims = self.output_dims(input.dims())?;
        // Lift 2D to 3D with a unit depth axis.
        let lift = |d: &[usize]| -> [usize; 3] {
            match d.len() {
                2 => [1, d[0], d[1]],
                _ => [d[0], d[1], d[2]],
            }
        };
        let [d, h, w] = lift(&input.dims()[2..]);
        let [kd, kh, kw] = lift(&self.kernel);
        let [od, oh, ow] = lift(&out_dims[2..]);
        let planes = input.dims()[0] * input.dims()[1];
        let (in_plane, out_plane) = (d * h * w, od * oh * ow);
        let x = input.data();

        let mut out = Vec::with_capacity(planes * out_plane);
        let mut argmax = Vec::with_capacity(planes * out_plane);
        for plane in 0..planes {
            let base = plane * in_plane;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let (z0, y0, x0) = (z * self.stride, y * self.stride, xo * self.stride);
                        let mut best = base + (z0 * h + y0) * w + x0;
                        // Scan in row-major order; strict `>` keeps the first maximum.
                        for a in 0..kd {
                            for b in 0..kh {
                                let row = base + ((z0 + a) * h + y0 + b) * w + x0;
                                for c in 0..kw {
                                    if x[row + c] > x[best] {
                                        best = row + c;
                                    }
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        Ok((
            Tensor::from_vec(&out_dims, out)?,
            PoolCache {
                input_dims: input.dims().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_output: &Tensor) -> Result<Tensor> {
        if grad_output.numel() != cache.argmax.len()
            || grad_output.dims() != self.output_dims(&cache.input_dims)?.as_slice()
        {
            return Err(Error::ShapeMismatch {
                expected: self.output_dims(&cache.input_dims)?,
                actual: grad_output.dims().to_vec(),
            });
        }
        let mut grad = Tensor::zeros(&cache.input_dims)?;
        let g = grad.data_mut();
        for (&idx, &dy) in cache.argmax.iter().zip(grad_output.data()) {
            g[idx] += dy;
        }
        Ok(grad)
    }
}
