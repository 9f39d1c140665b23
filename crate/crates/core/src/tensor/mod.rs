//! Dense row-major tensors, a reverse-mode tape, layers and the Adam optimizer.

mod adam;
mod nn;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use nn::{attention, init_linear, init_mlp2, init_projection, linear, mlp2, project, Mlp2Dims};
pub use params::{ParamGrads, ParamStore, ParamVars};
pub use tape::{bce, smooth_l1, Grads, Tape, Var, PROB_EPS};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Row-major n-dimensional array of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::zero(); numel] }
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![1, 1], data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("from_rows", "ragged rows");
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    /// 2-D tensor from `f64` values, converted into `S`.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(vec![rows, cols], values.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => shape_err("dims2", format!("expected a 2-D tensor, got {other:?}")),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            shape_err("item", format!("tensor of shape {:?} is not a scalar", self.shape))
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: S) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Plain matrix product (no tape).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]"));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, &self.data, k, 1, &other.data, n, 1, S::zero(), &mut out);
        Self::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| T::lit(v.as_f64())).collect() }
    }
}

/// Numerically stabilized softmax along `axis` (no tape).
pub fn softmax_values<S: Scalar>(t: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let shape = t.shape();
    if axis >= shape.len() {
        return shape_err("softmax", format!("axis {axis} out of range for {shape:?}"));
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::EmptyAxis("softmax"));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = t.data();
    let mut out = vec![S::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = S::neg_infinity();
            for a in 0..len {
                max = max.max(src[base + a * inner]);
            }
            let mut total = S::zero();
            for a in 0..len {
                let e = (src[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                total += e;
            }
            for a in 0..len {
                out[base + a * inner] /= total;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)?.ensure_finite("softmax")
}
