//! Reverse-mode computation record.
//!
//! Every op appends one node holding its forward value; `backward` walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because inputs always exist before their consumers.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::{softmax_values, Tensor};

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Relu(Var),
    LayerNorm { x: Var, inv_std: Vec<S> },
    Scale(Var, S),
    Softmax { x: Var, axis: usize },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaxRows { x: Var, argmax: Vec<usize> },
    RepeatRows(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Bce { p: Var, targets: Vec<S> },
    SmoothL1 { x: Var, targets: Vec<S> },
    Nll { p: Var, index: usize },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Variance floor of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probability clamp shared by the cross-entropy style losses.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn leaf(&mut self, t: Tensor<S>) -> Result<Var> {
        let t = t.ensure_finite("leaf")?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var> {
        let t = t.ensure_finite("constant")?;
        Ok(self.push(t, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return shape_err(
                "matmul",
                format!("[{m}x{k}] x [{k2}x{n}]{}", if trans_b { " (transposed rhs)" } else { "" }),
            );
        }
        let (rsb, csb) = if trans_b { (1, bc) } else { (bc, 1) };
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), rsb, csb, S::zero(), &mut out);
        let value = Tensor::new(vec![m, n], out)?.ensure_finite("matmul")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?.ensure_finite("add")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err("mul", format!("{:?} * {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?.ensure_finite("mul")?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `x + bias` with a `1×n` bias broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let (br, bc) = self.value(bias).dims2()?;
        if br != 1 || bc != n {
            return shape_err("add_row", format!("[{m}x{n}] + [{br}x{bc}]"));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let value = Tensor::new(vec![m, n], data)?.ensure_finite("add_row")?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(value, Op::AddRow { x, bias }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let ng = self.ng(x);
        Ok(self.push(value, Op::Relu(x), ng))
    }

    /// Normalize each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if n == 0 {
            return Err(Error::EmptyAxis("layer_norm"));
        }
        let eps = S::lit(LAYER_NORM_EPS);
        let inv_n = S::lit(1.0 / n as f64);
        let mut data = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in data.chunks_mut(n) {
            let mean = row.iter().fold(S::zero(), |a, &v| a + v) * inv_n;
            let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_n;
            let r = S::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            inv_std.push(r);
        }
        let value = Tensor::new(vec![m, n], data)?.ensure_finite("layer_norm")?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, ng))
    }

    pub fn scale(&mut self, x: Var, s: S) -> Result<Var> {
        let value = self.value(x).map(|v| v * s).ensure_finite("scale")?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Scale(x, s), ng))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = softmax_values(self.value(x), axis)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax { x, axis }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    /// Concatenate 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let m = self.value(first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return shape_err("concat_cols", format!("row counts {m} and {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stack 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let n = self.value(first).dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return shape_err("concat_rows", format!("column counts {n} and {c}"));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Column-wise max over rows: `[m×n] -> [1×n]`. Ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if m == 0 {
            return Err(Error::EmptyAxis("max_rows"));
        }
        let src = self.value(x).data();
        let mut best = src[..n].to_vec();
        let mut argmax = vec![0; n];
        for i in 1..m {
            for j in 0..n {
                let v = src[i * n + j];
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = Tensor::new(vec![1, n], best)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::MaxRows { x, argmax }, ng))
    }

    /// Broadcast a `1×n` row to `rows×n`.
    pub fn repeat_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, n) = self.value(x).dims2()?;
        if r != 1 {
            return shape_err("repeat_rows", format!("expected one row, got {r}"));
        }
        let row = self.value(x).data().to_vec();
        let data = row.iter().copied().cycle().take(rows * n).collect();
        let value = Tensor::new(vec![rows, n], data)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::RepeatRows(x), ng))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return shape_err("gather_rows", format!("row {bad} out of {m}"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::GatherRows { x, rows: rows.to_vec() }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: S = self.value(x).data().iter().copied().sum();
        let value = Tensor::scalar(total).ensure_finite("sum")?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Sum(x), ng))
    }

    /// Summed binary cross-entropy of probabilities `p` against `targets`,
    /// with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce_sum(&mut self, p: Var, targets: &[S]) -> Result<Var> {
        let probs = self.value(p).data();
        if probs.len() != targets.len() {
            return shape_err("bce", format!("{} probabilities, {} targets", probs.len(), targets.len()));
        }
        let mut total = S::zero();
        for (&pi, &yi) in probs.iter().zip(targets) {
            total += bce(pi, yi)?;
        }
        let value = Tensor::scalar(total).ensure_finite("bce")?;
        let ng = self.ng(p);
        Ok(self.push(value, Op::Bce { p, targets: targets.to_vec() }, ng))
    }

    /// Summed smooth-L1 of `x - targets` over all elements.
    pub fn smooth_l1_sum(&mut self, x: Var, targets: &[S]) -> Result<Var> {
        let vals = self.value(x).data();
        if vals.len() != targets.len() {
            return shape_err("smooth_l1", format!("{} values, {} targets", vals.len(), targets.len()));
        }
        let total: S = vals.iter().zip(targets).map(|(&a, &b)| smooth_l1(a, b)).sum();
        let value = Tensor::scalar(total).ensure_finite("smooth_l1")?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SmoothL1 { x, targets: targets.to_vec() }, ng))
    }

    /// `-ln p[index]` with the same clamp as [`Tape::bce_sum`].
    pub fn nll(&mut self, p: Var, index: usize) -> Result<Var> {
        let probs = self.value(p).data();
        let Some(&pi) = probs.get(index) else {
            return shape_err("nll", format!("index {index} out of {}", probs.len()));
        };
        let eps = S::lit(PROB_EPS);
        let value = Tensor::scalar(-(pi.max(eps).min(S::one() - eps)).ln()).ensure_finite("nll")?;
        let ng = self.ng(p);
        Ok(self.push(value, Op::Nll { p, index }, ng))
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    ///
    /// Leaf gradients are kept; intermediate ones are dropped once propagated.
    pub fn backward(&self, loss: Var) -> Result<Grads<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.value(loss).shape().to_vec();
        grads[loss.0] = Some(Tensor::new(shape, vec![S::one()])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2()?;
                let (br, bc) = self.value(*b).dims2()?;
                let n = if *trans_b { br } else { bc };
                if self.ng(*a) {
                    // dA = dC · B  (trans_b)   or   dC · Bᵀ
                    let (rsb, csb) = if *trans_b { (bc, 1) } else { (1, bc) };
                    let buf = self.buf(grads, *a);
                    S::gemm(m, n, k, gd, n, 1, self.value(*b).data(), rsb, csb, S::one(), buf);
                }
                if self.ng(*b) {
                    let ad = self.value(*a).data();
                    let buf = self.buf(grads, *b);
                    if *trans_b {
                        // dB = dCᵀ · A   [n×k]
                        S::gemm(n, m, k, gd, 1, n, ad, k, 1, S::one(), buf);
                    } else {
                        // dB = Aᵀ · dC   [k×n]
                        S::gemm(k, m, n, ad, 1, k, gd, n, 1, S::one(), buf);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        axpy(self.buf(grads, v), gd, S::one());
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.ng(v) {
                        let od = self.value(other).data();
                        let buf = self.buf(grads, v);
                        for ((dst, &gi), &oi) in buf.iter_mut().zip(gd).zip(od) {
                            *dst += gi * oi;
                        }
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if self.ng(*x) {
                    axpy(self.buf(grads, *x), gd, S::one());
                }
                if self.ng(*bias) {
                    let n = self.value(*bias).numel();
                    let buf = self.buf(grads, *bias);
                    for row in gd.chunks(n.max(1)) {
                        axpy(buf, row, S::one());
                    }
                }
            }
            Op::Relu(x) => {
                if self.ng(*x) {
                    let xd = self.value(*x).data();
                    let buf = self.buf(grads, *x);
                    for ((dst, &gi), &xi) in buf.iter_mut().zip(gd).zip(xd) {
                        if xi > S::zero() {
                            *dst += gi;
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.ng(*x) {
                    let y = node.value.data();
                    let n = node.value.shape()[1];
                    let inv_n = S::lit(1.0 / n as f64);
                    let buf = self.buf(grads, *x);
                    for (r, &is) in inv_std.iter().enumerate() {
                        let (g, yr) = (&gd[r * n..(r + 1) * n], &y[r * n..(r + 1) * n]);
                        let mean_g = g.iter().fold(S::zero(), |a, &v| a + v) * inv_n;
                        let mean_gy = g.iter().zip(yr).fold(S::zero(), |a, (&gi, &yi)| a + gi * yi) * inv_n;
                        for ((dst, &gi), &yi) in buf[r * n..(r + 1) * n].iter_mut().zip(g).zip(yr) {
                            *dst += is * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.ng(*x) {
                    axpy(self.buf(grads, *x), gd, *s);
                }
            }
            Op::Softmax { x, axis } => {
                if self.ng(*x) {
                    let y = node.value.data();
                    let shape = node.value.shape();
                    let len = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let buf = self.buf(grads, *x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = S::zero();
                            for a in 0..len {
                                let at = base + a * inner;
                                dot += gd[at] * y[at];
                            }
                            for a in 0..len {
                                let at = base + a * inner;
                                buf[at] += y[at] * (gd[at] - dot);
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if self.ng(*x) {
                    let (r, c) = self.value(*x).dims2()?;
                    let buf = self.buf(grads, *x);
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += gd[j * r + i];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let buf = self.buf(grads, p);
                        for i in 0..m {
                            axpy(&mut buf[i * w..(i + 1) * w], &gd[i * total + offset..i * total + offset + w], S::one());
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.ng(p) {
                        axpy(self.buf(grads, p), &gd[offset..offset + len], S::one());
                    }
                    offset += len;
                }
            }
            Op::MaxRows { x, argmax } => {
                if self.ng(*x) {
                    let n = argmax.len();
                    let buf = self.buf(grads, *x);
                    for (j, &i) in argmax.iter().enumerate() {
                        buf[i * n + j] += gd[j];
                    }
                }
            }
            Op::RepeatRows(x) => {
                if self.ng(*x) {
                    let n = self.value(*x).numel();
                    let buf = self.buf(grads, *x);
                    for row in gd.chunks(n.max(1)) {
                        axpy(buf, row, S::one());
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if self.ng(*x) {
                    let n = node.value.cols();
                    let buf = self.buf(grads, *x);
                    for (out_row, &r) in rows.iter().enumerate() {
                        axpy(&mut buf[r * n..(r + 1) * n], &gd[out_row * n..(out_row + 1) * n], S::one());
                    }
                }
            }
            Op::Reshape(x) => {
                if self.ng(*x) {
                    axpy(self.buf(grads, *x), gd, S::one());
                }
            }
            Op::Sum(x) => {
                if self.ng(*x) {
                    let g0 = gd[0];
                    self.buf(grads, *x).iter_mut().for_each(|v| *v += g0);
                }
            }
            Op::Bce { p, targets } => {
                if self.ng(*p) {
                    let g0 = gd[0];
                    let eps = S::lit(PROB_EPS);
                    let pd = self.value(*p).data();
                    let buf = self.buf(grads, *p);
                    for ((dst, &pi), &yi) in buf.iter_mut().zip(pd).zip(targets) {
                        if pi >= eps && pi <= S::one() - eps {
                            *dst += g0 * (-yi / pi + (S::one() - yi) / (S::one() - pi));
                        }
                    }
                }
            }
            Op::SmoothL1 { x, targets } => {
                if self.ng(*x) {
                    let g0 = gd[0];
                    let xd = self.value(*x).data();
                    let buf = self.buf(grads, *x);
                    for ((dst, &a), &b) in buf.iter_mut().zip(xd).zip(targets) {
                        let d = a - b;
                        let slope = if d.abs() < S::one() { d } else { d.signum() };
                        *dst += g0 * slope;
                    }
                }
            }
            Op::Nll { p, index } => {
                if self.ng(*p) {
                    let eps = S::lit(PROB_EPS);
                    let pi = self.value(*p).data()[*index];
                    if pi >= eps && pi <= S::one() - eps {
                        let g0 = gd[0];
                        self.buf(grads, *p)[*index] += -g0 / pi;
                    }
                }
            }
        }
        Ok(())
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor<S>>], v: Var) -> &'g mut [S] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
            .data_mut()
    }
}

fn axpy<S: Scalar>(dst: &mut [S], src: &[S], a: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Binary cross-entropy `-y ln p - (1 - y) ln(1 - p)` with `p` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce<S: Scalar>(p: S, y: S) -> Result<S> {
    if !(p >= S::zero() && p <= S::one()) {
        return Err(Error::InvalidArgument(format!("bce probability {p} outside [0, 1]")));
    }
    let eps = S::lit(PROB_EPS);
    let pc = p.max(eps).min(S::one() - eps);
    Ok(-y * pc.ln() - (S::one() - y) * (S::one() - pc).ln())
}

/// `0.5 d²` for `|d| < 1`, `|d| - 0.5` otherwise, with `d = a - b`.
pub fn smooth_l1<S: Scalar>(a: S, b: S) -> S {
    let d = (a - b).abs();
    if d < S::one() {
        S::lit(0.5) * d * d
    } else {
        d - S::lit(0.5)
    }
}
