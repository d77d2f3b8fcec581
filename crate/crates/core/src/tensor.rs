//! Dense row-major tensors.
//!
//! Every value in the crate is stored as `f64`. [`Precision`] only decides how
//! scalars are written to disk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk scalar width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Precision {
    #[serde(rename = "f32")]
    Single,
    #[default]
    #[serde(rename = "f64")]
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    /// Rounds `x` to the nearest value representable at this precision.
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Single => x as f32 as f64,
            Precision::Double => x,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::Single),
            "f64" => Ok(Precision::Double),
            other => Err(Error::invalid(format!("unknown precision `{other}` (expected f32 or f64)"))),
        }
    }
}

/// Axis lengths of a tensor. The empty shape denotes a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "axis {axis} of {dims:?} has length 0"
            )));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for axis in (0..self.0.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.0[axis + 1];
        }
        strides
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    /// Population variance (divides by the element count).
    Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} holds {} elements but {} were supplied",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Like [`Tensor::zeros`] but with the shape of `other`.
    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        let dims = self.dims();
        if index.len() != dims.len() || index.iter().zip(dims).any(|(&i, &d)| i >= d) {
            return Err(Error::invalid(format!(
                "index {index:?} out of bounds for shape {:?}",
                dims
            )));
        }
        Ok(index
            .iter()
            .zip(self.shape.strides())
            .map(|(i, s)| i * s)
            .sum())
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let offset = self.offset(index)?;
        self.data[offset] = value;
        Ok(())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.dims().to_vec(),
                actual: other.dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn elementwise(&self, op: ElementwiseOp, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let f = match op {
            ElementwiseOp::Add => |a: f64, b: f64| a + b,
            ElementwiseOp::Sub => |a: f64, b: f64| a - b,
            ElementwiseOp::Mul => |a: f64, b: f64| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, other)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// In place `self += factor * other`.
    pub fn add_scaled_assign(&mut self, factor: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.dims() {
            &[m, k] => (m, k),
            d => return Err(Error::InvalidShape(format!("matmul lhs must be rank 2, got {d:?}"))),
        };
        let (k2, n) = match other.dims() {
            &[k2, n] => (k2, n),
            d => return Err(Error::InvalidShape(format!("matmul rhs must be rank 2, got {d:?}"))),
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                expected: vec![k, n],
                actual: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(&self.data, k),
            MatRef::row_major(&other.data, n),
            &mut out,
            false,
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// Mean or population variance over `axes`; reduced axes are removed.
    pub fn reduce(&self, op: Reduction, axes: &[usize]) -> Result<Tensor> {
        if axes.is_empty() {
            return Err(Error::invalid("empty reduction: no axes given"));
        }
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank || reduced[axis] {
                return Err(Error::invalid(format!(
                    "invalid reduction axes {axes:?} for rank {rank}"
                )));
            }
            reduced[axis] = true;
        }
        let dims = self.dims();
        let kept: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).map(|a| dims[a]).collect();
        let out_len: usize = kept.iter().product();
        let count = (self.numel() / out_len) as f64;

        // Map every input element to its output slot.
        let mut out_strides = vec![0usize; rank];
        let mut stride = 1;
        for axis in (0..rank).rev() {
            if !reduced[axis] {
                out_strides[axis] = stride;
                stride *= dims[axis];
            }
        }
        let slot_of = |flat: usize| {
            let mut rem = flat;
            let mut slot = 0;
            for axis in (0..rank).rev() {
                let i = rem % dims[axis];
                rem /= dims[axis];
                slot += i * out_strides[axis];
            }
            slot
        };

        let mut mean = vec![0.0; out_len];
        for (flat, &x) in self.data.iter().enumerate() {
            mean[slot_of(flat)] += x;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let data = match op {
            Reduction::Mean => mean,
            Reduction::Var => {
                let mut var = vec![0.0; out_len];
                for (flat, &x) in self.data.iter().enumerate() {
                    let slot = slot_of(flat);
                    let d = x - mean[slot];
                    var[slot] += d * d;
                }
                var.iter_mut().for_each(|v| *v /= count);
                var
            }
        };
        Ok(Tensor {
            shape: Shape(kept),
            data,
        })
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(Reduction::Mean, axes)
    }

    pub fn var(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(Reduction::Var, axes)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: Shape(vec![self.data.len()]),
            data: self.data.clone(),
        }
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let mut out = self.clone();
        out.reshape_in_place(dims)?;
        Ok(out)
    }

    pub fn reshape_in_place(&mut self, dims: &[usize]) -> Result<()> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {} elements into {shape}",
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(())
    }
}

/// Borrowed matrix with explicit strides, so transposes cost nothing.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub(crate) fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix stored in `data`.
    pub(crate) fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), `a` is `m x k`, `b` is `k x n`,
/// `c` is row-major `m x n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset(k, n) < b.data.len(), "gemm rhs out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every offset matrixmultiply will touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
