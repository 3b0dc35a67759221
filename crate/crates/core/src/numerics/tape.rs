//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its variables in creation
//! order, which is already a topological order. [`Tape::backward`] walks the
//! record once in reverse and consumes it.

use std::sync::Arc;

use super::tensor::{broadcast_kind, gemm, Broadcast, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    LeftMul(Arc<Tensor>, Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    /// Tape that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// Tape that only evaluates; values are identical to a recording tape.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let rg = self.recording;
        self.push(t, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.values.len();
        self.values.push(value);
        let (op, requires_grad) = if self.recording && requires_grad {
            (op, true)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node { op, requires_grad });
        Var(idx)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].matmul(&self.values[b.0])?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        make: fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        let kind = broadcast_kind(x, y).ok_or_else(|| Error::shape(name, x.shape(), y.shape()))?;
        let out = match name {
            "add" => x.add(y)?,
            "sub" => x.sub(y)?,
            _ => x.mul(y)?,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, make(a, b, kind), rg))
    }

    /// `a + b`, broadcasting `b` when it is a scalar or a row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.values[a.0]
            .map(|v| scale * v + shift)
            .check_finite("affine")?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Affine(a, scale), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Clip at zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.values[a.0].sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.values[a.0];
        let out = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.values[parts[0].0].rows();
        let mut total = 0;
        for p in parts {
            let t = &self.values[p.0];
            if t.rows() != rows || t.shape().len() != 2 {
                return Err(Error::shape(
                    "concat_cols",
                    self.values[parts[0].0].shape(),
                    t.shape(),
                ));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let t = &self.values[p.0];
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.values[a.0];
        let (rows, cols) = (t.rows(), t.cols());
        if start >= end || end > cols || t.shape().len() != 2 {
            return Err(Error::shape("slice_cols", t.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        let out = Tensor::matrix(rows, w, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start, end), rg))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.values[parts[0].0].cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.values[p.0];
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.values[parts[0].0].shape(),
                    t.shape(),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = &self.values[a.0];
        let (rows, cols) = (t.rows(), t.cols());
        if start >= end || end > rows {
            return Err(Error::shape("slice_rows", t.shape(), &[start, end]));
        }
        let out = Tensor::matrix(
            end - start,
            cols,
            t.data()[start * cols..end * cols].to_vec(),
        )?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.values[a.0].clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Applies an `n×n` constant operator along the leading axis of `x`,
    /// where `x` is viewed as an `n × (len/n)` matrix.
    pub fn left_mul(&mut self, op: Arc<Tensor>, x: Var) -> Result<Var> {
        let t = &self.values[x.0];
        let n = op.rows();
        if op.cols() != n || n == 0 || !t.len().is_multiple_of(n) {
            return Err(Error::shape("left_mul", op.shape(), t.shape()));
        }
        let m = t.len() / n;
        let mut out = vec![0.0; t.len()];
        gemm(n, n, m, op.data(), false, t.data(), false, &mut out, 0.0);
        let out = Tensor::new(t.shape().to_vec(), out)?.check_finite("left_mul")?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LeftMul(op, x), rg))
    }

    /// Reverse pass from a scalar loss. The tape can be consumed only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = &self.values[loss.0];
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;
        let n = self.values.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.values.iter().map(|t| t.shape().to_vec()).collect();
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let vals = &self.values;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (&vals[a.0], &vals[b.0]);
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if self.rg(*a) {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, y.data(), true, &mut d, 0.0);
                    accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
                }
                if self.rg(*b) {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, x.data(), true, g.data(), false, &mut d, 0.0);
                    accumulate(grads, *b, Tensor::new(y.shape().to_vec(), d)?);
                }
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let neg = matches!(self.nodes[idx].op, Op::Sub(..));
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    let mut d = reduce_broadcast(g, &vals[b.0], *kind);
                    if neg {
                        d.data_mut().iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, *b, d);
                }
            }
            Op::Mul(a, b, kind) => {
                let (x, y) = (&vals[a.0], &vals[b.0]);
                if self.rg(*a) {
                    accumulate(grads, *a, g.mul(y)?);
                }
                if self.rg(*b) {
                    let gx = g.mul(x)?;
                    accumulate(grads, *b, reduce_broadcast(&gx, y, *kind));
                }
            }
            Op::Affine(a, scale) => accumulate(grads, *a, g.scale(*scale)),
            Op::Sigmoid(a) => {
                let y = &vals[idx];
                accumulate(grads, *a, zip(g, y, |g, y| g * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                let y = &vals[idx];
                accumulate(grads, *a, zip(g, y, |g, y| g * (1.0 - y * y)));
            }
            Op::Relu(a) => {
                let x = &vals[a.0];
                accumulate(grads, *a, zip(g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Abs(a) => {
                let x = &vals[a.0];
                accumulate(grads, *a, zip(g, x, |g, x| g * sign(x)));
            }
            Op::Sum(a) => {
                accumulate(grads, *a, Tensor::filled(vals[a.0].shape(), g.item()));
            }
            Op::Mean(a) => {
                let n = vals[a.0].len().max(1) as f64;
                accumulate(grads, *a, Tensor::filled(vals[a.0].shape(), g.item() / n));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = vals[p.0].cols();
                    if self.rg(*p) {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + c],
                            );
                        }
                        accumulate(grads, *p, Tensor::new(vals[p.0].shape().to_vec(), data)?);
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start, end) => {
                let src = &vals[a.0];
                let (rows, cols) = (src.rows(), src.cols());
                let w = end - start;
                let mut d = Tensor::zeros(src.shape());
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + end]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = vals[p.0].len();
                    if self.rg(*p) {
                        let data = g.data()[offset..offset + len].to_vec();
                        accumulate(grads, *p, Tensor::new(vals[p.0].shape().to_vec(), data)?);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let src = &vals[a.0];
                let cols = src.cols();
                let mut d = Tensor::zeros(src.shape());
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *a, d);
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, g.clone().reshape(vals[a.0].shape())?);
            }
            Op::LeftMul(op, x) => {
                let n = op.rows();
                let m = g.len() / n;
                let mut d = vec![0.0; g.len()];
                gemm(n, n, m, op.data(), true, g.data(), false, &mut d, 0.0);
                accumulate(grads, *x, Tensor::new(vals[x.0].shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

fn reduce_broadcast(g: &Tensor, target: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::filled(target.shape(), g.sum()),
        Broadcast::Row => {
            let c = g.cols();
            let mut out = vec![0.0; c];
            for (i, v) in g.data().iter().enumerate() {
                out[i % c] += v;
            }
            Tensor::new(target.shape().to_vec(), out).expect("row broadcast shape")
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2, 2]));
        let c = tape.constant(Tensor::scalar(4.0));
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get_or_zeros(w), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_twice_fails() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(1.0));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0, -3.2, 40.0]).unwrap());
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        let r = tape.relu(x);
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(t).data()[0], 0.0);
        assert!((tape.value(t).data()[2] - 1.0).abs() < 1e-12);
        assert_eq!(tape.value(r).data()[1], 0.0);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(Tensor::zeros(&[3, 3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(b, a), Err(Error::Shape { .. })));
    }
}
