//! 2D and 3D convolution with zero padding.
//!
//! Both layers lower each sample to a patch matrix (im2col) and multiply it by
//! the kernel matrix. Kernels are stored `[P, M, K...]` so that row `p` of the
//! kernel matrix is the flattened kernel `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// Output length along one axis, or `None` if the window does not fit.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Forward state a convolution backward pass consumes.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
}

impl ConvCache {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

/// Spatial geometry of one sample, always expressed with three axes. The 2D
/// layer never builds one of these; it has its own patch loops.
#[derive(Debug, Clone, Copy)]
struct Geometry3 {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: usize,
    padding: usize,
}

impl Geometry3 {
    fn patch_rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    /// Calls `f(row, col, input_offset)` for every in-bounds patch entry.
    #[inline]
    fn for_each_patch(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let pad = self.padding as isize;
        for m in 0..self.channels {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let row = ((m * kd + a) * kh + b) * kw + c;
                        for z in 0..od {
                            let iz = (z * self.stride + a) as isize - pad;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride + b) as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = ((m * d + iz as usize) * h + iy as usize) * w;
                                let col_row = (z * oh + y) * ow;
                                for x in 0..ow {
                                    let ix = (x * self.stride + c) as isize - pad;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    f(row, col_row + x, in_row + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_rank(input: &Tensor, rank: usize, what: &str) -> Result<()> {
    if input.rank() != rank {
        return Err(Error::InvalidShape(format!(
            "{what} expects a rank-{rank} input, got {:?}",
            input.dims()
        )));
    }
    Ok(())
}

fn check_params(kernels: &Tensor, bias: &Tensor, rank: usize, stride: usize) -> Result<()> {
    if kernels.rank() != rank {
        return Err(Error::InvalidShape(format!(
            "kernel tensor must be rank {rank}, got {:?}",
            kernels.dims()
        )));
    }
    if bias.dims() != [kernels.dims()[0]] {
        return Err(Error::ShapeMismatch {
            expected: vec![kernels.dims()[0]],
            actual: bias.dims().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok(())
}

/// Shared forward: `out[n] = K · cols(x[n]) + b`.
fn forward_with<F>(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    out_dims: Vec<usize>,
    patch_rows: usize,
    positions: usize,
    sample_len: usize,
    im2col: F,
) -> Result<Tensor>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let p = kernels.dims()[0];
    let mut out = Tensor::zeros(&out_dims)?;
    let kmat = kernels.data();
    let bias = bias.data();
    out.data_mut()
        .par_chunks_mut(p * positions)
        .zip(input.data().par_chunks(sample_len))
        .for_each_init(
            || vec![0.0; patch_rows * positions],
            |cols, (out_n, x_n)| {
                im2col(x_n, cols);
                gemm(
                    p,
                    patch_rows,
                    positions,
                    MatRef::row_major(kmat, patch_rows),
                    MatRef::row_major(cols, positions),
                    out_n,
                    false,
                );
                for (row, &b) in out_n.chunks_mut(positions).zip(bias) {
                    row.iter_mut().for_each(|v| *v += b);
                }
            },
        );
    Ok(out)
}

/// Shared backward. `im2col` fills a patch matrix, `col2im` scatters one back
/// (accumulating) into a zeroed sample gradient.
#[allow(clippy::too_many_arguments)]
fn backward_with<F, G>(
    input: &Tensor,
    kernels: &Tensor,
    grad_output: &Tensor,
    patch_rows: usize,
    positions: usize,
    sample_len: usize,
    im2col: F,
    col2im: G,
) -> Result<ConvGrads>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    let p = kernels.dims()[0];
    let kmat = kernels.data();
    let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = grad_output
        .data()
        .par_chunks(p * positions)
        .zip(input.data().par_chunks(sample_len))
        .map(|(dy, x_n)| {
            let mut cols = vec![0.0; patch_rows * positions];
            im2col(x_n, &mut cols);
            let mut dk = vec![0.0; p * patch_rows];
            // dK = dY · colsᵀ
            gemm(
                p,
                positions,
                patch_rows,
                MatRef::row_major(dy, positions),
                MatRef::transposed(&cols, positions),
                &mut dk,
                false,
            );
            // dcols = Kᵀ · dY
            gemm(
                patch_rows,
                p,
                positions,
                MatRef::transposed(kmat, patch_rows),
                MatRef::row_major(dy, positions),
                &mut cols,
                false,
            );
            let mut dx = vec![0.0; sample_len];
            col2im(&cols, &mut dx);
            let db = dy.chunks(positions).map(|row| row.iter().sum()).collect();
            (dx, dk, db)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(input.numel());
    let mut grad_kernels = vec![0.0; kernels.numel()];
    let mut grad_bias = vec![0.0; p];
    for (dx, dk, db) in per_sample {
        grad_input.extend_from_slice(&dx);
        grad_kernels.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
        grad_bias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.dims(), grad_input)?,
        kernels: Tensor::from_vec(kernels.dims(), grad_kernels)?,
        bias: Tensor::from_vec(&[p], grad_bias)?,
    })
}

fn check_grad_output(grad_output: &Tensor, expected: &[usize]) -> Result<()> {
    if grad_output.dims() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: grad_output.dims().to_vec(),
        });
    }
    Ok(())
}

/// 2D convolution over `[N, M, H, W]` inputs with kernels `[P, M, S, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geometry2 {
    channels: usize,
    input: [usize; 2],
    kernel: [usize; 2],
    output: [usize; 2],
    stride: usize,
    padding: usize,
}

impl Geometry2 {
    fn patch_rows(&self) -> usize {
        self.channels * self.kernel[0] * self.kernel[1]
    }

    fn positions(&self) -> usize {
        self.output[0] * self.output[1]
    }

    #[inline]
    fn for_each_patch(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [h, w] = self.input;
        let [kh, kw] = self.kernel;
        let [oh, ow] = self.output;
        let pad = self.padding as isize;
        for m in 0..self.channels {
            for s in 0..kh {
                for t in 0..kw {
                    let row = (m * kh + s) * kw + t;
                    for i in 0..oh {
                        let ii = (i * self.stride + s) as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let in_row = (m * h + ii as usize) * w;
                        for j in 0..ow {
                            let jj = (j * self.stride + t) as isize - pad;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            f(row, i * ow + j, in_row + jj as usize);
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        check_params(&kernels, &bias, 4, stride)?;
        Ok(Conv2d {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dims()[1]
    }

    /// Output shape for an `[N, M, H, W]` input.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.geometry(input).map(|g| {
            vec![input[0], self.out_channels(), g.output[0], g.output[1]]
        })
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry2> {
        let &[_, m, h, w] = input else {
            return Err(Error::InvalidShape(format!(
                "conv2d expects [N, M, H, W], got {input:?}"
            )));
        };
        if m != self.in_channels() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.in_channels()],
                actual: vec![m],
            });
        }
        let k = &self.kernels.dims()[2..];
        let oh = conv_output_len(h, k[0], self.stride, self.padding);
        let ow = conv_output_len(w, k[1], self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Geometry2 {
                channels: m,
                input: [h, w],
                kernel: [k[0], k[1]],
                output: [oh, ow],
                stride: self.stride,
                padding: self.padding,
            }),
            _ => Err(Error::InvalidShape(format!(
                "conv2d kernel {k:?} with padding {} does not fit input {input:?}",
                self.padding
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        check_rank(input, 4, "conv2d")?;
        let g = self.geometry(input.dims())?;
        let sample_len = g.channels * g.input[0] * g.input[1];
        let out = forward_with(
            input,
            &self.kernels,
            &self.bias,
            self.output_dims(input.dims())?,
            g.patch_rows(),
            g.positions(),
            sample_len,
            |x, cols| im2col_2d(&g, x, cols),
        )?;
        Ok((
            out,
            ConvCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_output: &Tensor) -> Result<ConvGrads> {
        let input = &cache.input;
        let g = self.geometry(input.dims())?;
        check_grad_output(grad_output, &self.output_dims(input.dims())?)?;
        let sample_len = g.channels * g.input[0] * g.input[1];
        backward_with(
            input,
            &self.kernels,
            grad_output,
            g.patch_rows(),
            g.positions(),
            sample_len,
            |x, cols| im2col_2d(&g, x, cols),
            |cols, dx| {
                let positions = g.positions();
                g.for_each_patch(|row, col, off| dx[off] += cols[row * positions + col]);
            },
        )
    }
}

fn im2col_2d(g: &Geometry2, x: &[f64], cols: &mut [f64]) {
    cols.iter_mut().for_each(|v| *v = 0.0);
    let positions = g.positions();
    g.for_each_patch(|row, col, off| cols[row * positions + col] = x[off]);
}

fn im2col_3d(g: &Geometry3, x: &[f64], cols: &mut [f64]) {
    cols.iter_mut().for_each(|v| *v = 0.0);
    let positions = g.positions();
    g.for_each_patch(|row, col, off| cols[row * positions + col] = x[off]);
}

/// 3D convolution over `[N, M, D, H, W]` inputs with kernels `[P, M, KD, KH, KW]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3d {
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        check_params(&kernels, &bias, 5, stride)?;
        Ok(Conv3d {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dims()[1]
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![
            input[0],
            self.out_channels(),
            g.output[0],
            g.output[1],
            g.output[2],
        ])
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry3> {
        let &[_, m, d, h, w] = input else {
            return Err(Error::InvalidShape(format!(
                "conv3d expects [N, M, D, H, W], got {input:?}"
            )));
        };
        if m != self.in_channels() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.in_channels()],
                actual: vec![m],
            });
        }
        let k = &self.kernels.dims()[2..];
        let mut output = [0; 3];
        for (axis, (&len, &kl)) in [d, h, w].iter().zip(k).enumerate() {
            output[axis] = conv_output_len(len, kl, self.stride, self.padding).ok_or_else(|| {
                Error::InvalidShape(format!(
                    "conv3d kernel {k:?} with padding {} does not fit input {input:?}",
                    self.padding
                ))
            })?;
        }
        Ok(Geometry3 {
            channels: m,
            input: [d, h, w],
            kernel: [k[0], k[1], k[2]],
            output,
            stride: self.stride,
            padding: self.padding,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        check_rank(input, 5, "conv3d")?;
        let g = self.geometry(input.dims())?;
        let out = forward_with(
            input,
            &self.kernels,
            &self.bias,
            self.output_dims(input.dims())?,
            g.patch_rows(),
            g.positions(),
            g.input_len(),
            |x, cols| im2col_3d(&g, x, cols),
        )?;
        Ok((
            out,
            ConvCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_output: &Tensor) -> Result<ConvGrads> {
        let input = &cache.input;
        let g = self.geometry(input.dims())?;
        check_grad_output(grad_output, &self.output_dims(input.dims())?)?;
        backward_with(
            input,
            &self.kernels,
            grad_output,
            g.patch_rows(),
            g.positions(),
            g.input_len(),
            |x, cols| im2col_3d(&g, x, cols),
            |cols, dx| {
                let positions = g.positions();
                g.for_each_patch(|row, col, off| dx[off] += cols[row * positions + col]);
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv2d(kernels: Tensor, bias: Vec<f64>, padding: usize) -> Conv2d {
        let p = bias.len();
        Conv2d::new(kernels, Tensor::from_vec(&[p], bias).unwrap(), 1, padding).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut k = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        k.set(&[0, 0, 1, 1], 1.0).unwrap();
        let layer = conv2d(k, vec![0.0], 1);
        let x = Tensor::from_vec(&[1, 1, 4, 5], (0..20).map(|v| v as f64 * 0.3 - 2.0).collect())
            .unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums_the_window() {
        let layer = conv2d(Tensor::full(&[1, 1, 3, 3], 1.0).unwrap(), vec![0.0], 0);
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let layer = conv2d(Tensor::full(&[2, 3, 3, 3], 0.7).unwrap(), vec![1.5, -2.0], 1);
        let (y, _) = layer.forward(&Tensor::zeros(&[2, 3, 5, 5]).unwrap()).unwrap();
        for (c, chunk) in y.data().chunks(25).enumerate() {
            let expected = if c % 2 == 0 { 1.5 } else { -2.0 };
            assert!(chunk.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn conv3d_unit_cube_sum() {
        let layer = Conv3d::new(
            Tensor::full(&[1, 1, 2, 2, 2], 1.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            1,
            0,
        )
        .unwrap();
        let (y, _) = layer
            .forward(&Tensor::full(&[1, 1, 2, 2, 2], 1.0).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn conv3d_zero_kernel_constant_bias() {
        let layer = Conv3d::new(
            Tensor::zeros(&[1, 2, 3, 3, 3]).unwrap(),
            Tensor::from_vec(&[1], vec![3.0]).unwrap(),
            1,
            1,
        )
        .unwrap();
        let x = Tensor::full(&[2, 2, 3, 4, 4], 5.0).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 1, 3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn padding_one_preserves_spatial_dims() {
        let layer = conv2d(Tensor::zeros(&[4, 2, 3, 3]).unwrap(), vec![0.0; 4], 1);
        assert_eq!(layer.output_dims(&[3, 2, 7, 9]).unwrap(), vec![3, 4, 7, 9]);
        let layer3 = Conv3d::new(
            Tensor::zeros(&[4, 2, 3, 3, 3]).unwrap(),
            Tensor::zeros(&[4]).unwrap(),
            1,
            1,
        )
        .unwrap();
        assert_eq!(
            layer3.output_dims(&[1, 2, 2, 6, 8]).unwrap(),
            vec![1, 4, 2, 6, 8]
        );
    }

    #[test]
    fn stride_two_output_length() {
        assert_eq!(conv_output_len(7, 3, 2, 0), Some(3));
        assert_eq!(conv_output_len(8, 3, 2, 1), Some(4));
        assert_eq!(conv_output_len(2, 3, 1, 0), None);
    }

    #[test]
    fn errors_on_channel_mismatch_and_oversized_kernel() {
        let layer = conv2d(Tensor::zeros(&[1, 2, 3, 3]).unwrap(), vec![0.0], 0);
        assert!(layer.forward(&Tensor::zeros(&[1, 3, 5, 5]).unwrap()).is_err());
        assert!(layer.forward(&Tensor::zeros(&[1, 2, 2, 5]).unwrap()).is_err());
        assert!(layer.forward(&Tensor::zeros(&[2, 5, 5]).unwrap()).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let layer = conv2d(Tensor::full(&[2, 1, 3, 3], 0.5).unwrap(), vec![0.1, 0.2], 1);
        let x = Tensor::full(&[2, 1, 4, 4], 1.0).unwrap();
        let (y, cache) = layer.forward(&x).unwrap();
        let g = layer.backward(&cache, &Tensor::zeros_like(&y)).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_output_kernel_gradient_is_the_patch() {
        let layer = conv2d(Tensor::full(&[1, 1, 3, 3], 0.25).unwrap(), vec![0.0], 0);
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let g = layer
            .backward(&cache, &Tensor::full(&[1, 1, 1, 1], 1.0).unwrap())
            .unwrap();
        assert_eq!(g.kernels.data(), x.data());
        assert_eq!(g.bias.data(), &[1.0]);
        assert!(g.input.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_rejects_wrong_gradient_shape() {
        let layer = conv2d(Tensor::zeros(&[1, 1, 3, 3]).unwrap(), vec![0.0], 1);
        let (_, cache) = layer.forward(&Tensor::zeros(&[1, 1, 4, 4]).unwrap()).unwrap();
        assert!(layer
            .backward(&cache, &Tensor::zeros(&[1, 1, 3, 3]).unwrap())
            .is_err());
    }
}
