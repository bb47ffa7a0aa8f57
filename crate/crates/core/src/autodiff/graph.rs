//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is rebuilt for every loss evaluation. Leaves are either
//! constants or [`Parameter`]s; every other node records the primitive that
//! produced it. [`Graph::backward`] walks the nodes in reverse creation order
//! and returns the gradient of a scalar loss with respect to each parameter
//! that was bound into the graph.

use std::collections::BTreeMap;

use super::param::{ParamId, Parameter};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    GatherRows(usize, Vec<usize>),
    LogSoftmax(usize),
    PickCols(usize, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::LogSoftmax(_) => "log_softmax",
            Op::PickCols(..) => "pick_cols",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss keyed by parameter id.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.map.iter()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, false)
    }

    /// Binds a parameter. Frozen parameters, or any parameter bound with
    /// `trainable = false`, become constants.
    pub fn param(&mut self, p: &Parameter, trainable: bool) -> Var {
        if trainable && !p.frozen {
            self.push(p.value.clone(), Op::Param(p.id), true)
        } else {
            self.constant(p.value.clone())
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            x.cols() == y.rows(),
            "matmul shape mismatch {:?} x {:?}",
            x.shape(),
            y.shape()
        );
        let out = matmul(x, y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(out, Op::MatMul(a.0, b.0), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = transpose(&self.nodes[a.0].value);
        let rg = self.rg(a.0);
        self.push(out, Op::Transpose(a.0), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            x.len() == y.len() && x.rows() == y.rows(),
            "{} shape mismatch {:?} vs {:?}",
            op.name(),
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Add(a.0, b.0), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Sub(a.0, b.0), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Mul(a.0, b.0), |p, q| p * q)
    }

    /// Adds a row vector (`1 x m` or `[m]`) to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let m = x.cols();
        assert!(r.len() == m, "add_row width mismatch {:?} + {:?}", x.shape(), r.shape());
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(m) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a.0) || self.rg(row.0);
        self.push(out, Op::AddRow(a.0, row.0), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|v| v * c);
        let rg = self.rg(a.0);
        self.push(out, Op::Scale(a.0, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|v| v + c);
        let rg = self.rg(a.0);
        self.push(out, Op::AddScalar(a.0), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.nodes[a.0]
            .value
            .map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a.0);
        self.push(out, Op::LeakyRelu(a.0, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(a.0);
        self.push(out, Op::Sigmoid(a.0), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v * v);
        let rg = self.rg(a.0);
        self.push(out, Op::Square(a.0), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(f64::sqrt);
        let rg = self.rg(a.0);
        self.push(out, Op::Sqrt(a.0), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        assert!(!x.is_empty(), "mean of empty tensor");
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Row sums of an `n x m` matrix as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let n = x.rows();
        let data = (0..n).map(|r| x.row(r).iter().sum()).collect();
        let out = Tensor::matrix(n, 1, data).expect("column");
        let rg = self.rg(a.0);
        self.push(out, Op::SumCols(a.0), rg)
    }

    /// Euclidean norm of every row, `sqrt(sum(x^2) + eps)`, as `n x 1`.
    pub fn row_norm(&mut self, a: Var, eps: f64) -> Var {
        let sq = self.square(a);
        let s = self.sum_cols(sq);
        let s = self.add_scalar(s, eps);
        self.sqrt(s)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(x.rows() == y.rows(), "concat_cols row mismatch");
        let (n, p, q) = (x.rows(), x.cols(), y.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = Tensor::matrix(n, p + q, data).expect("concat");
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(out, Op::ConcatCols(a.0, b.0), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = &self.nodes[a.0].value;
        assert!(start < end && end <= x.cols(), "slice_cols out of range");
        let n = x.rows();
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        let out = Tensor::matrix(n, end - start, data).expect("slice");
        let rg = self.rg(a.0);
        self.push(out, Op::SliceCols(a.0, start, end), rg)
    }

    /// Row `idx[k]` of `a` becomes row `k` of the result.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        let m = x.cols();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            assert!(i < x.rows(), "gather_rows index {i} out of range");
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::matrix(idx.len(), m, data).expect("gather");
        let rg = self.rg(a.0);
        self.push(out, Op::GatherRows(a.0, idx.to_vec()), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let m = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a.0);
        self.push(out, Op::LogSoftmax(a.0), rg)
    }

    /// Picks entry `(k, idx[k])` for every row, giving `n x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        assert!(idx.len() == x.rows(), "pick_cols needs one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < x.cols(), "pick_cols index out of range");
                x.get(r, c)
            })
            .collect();
        let out = Tensor::matrix(idx.len(), 1, data).expect("pick");
        let rg = self.rg(a.0);
        self.push(out, Op::PickCols(a.0, idx.to_vec()), rg)
    }

    fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.all_finite() {
                return Err(Error::Numeric {
                    node: i,
                    op: n.op.name(),
                    detail: "non-finite forward value".into(),
                });
            }
        }
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !dy.all_finite() {
                return Err(Error::Numeric {
                    node: i,
                    op: node.op.name(),
                    detail: "non-finite gradient".into(),
                });
            }
            match &node.op {
                Op::Const => {}
                Op::Param(id) => match out.map.get_mut(id) {
                    Some(g) => g.add_assign(&dy),
                    None => {
                        out.map.insert(*id, dy);
                    }
                },
                Op::MatMul(a, b) => {
                    let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.rg(*a) {
                        acc(&mut grads, *a, matmul_nt(&dy, y));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, matmul_tn(x, &dy));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, transpose(&dy)),
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, dy.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, dy);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.rg(*r) {
                        let shape = self.nodes[*r].value.shape().to_vec();
                        let sums = dy.column_sums();
                        acc(&mut grads, *r, Tensor::new(shape, sums).expect("row"));
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        acc(&mut grads, *b, dy.map(|v| -v));
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, dy);
                    }
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.rg(*a) {
                        acc(&mut grads, *a, zip(&dy, y, |g, q| g * q));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, zip(&dy, x, |g, p| g * p));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, dy.map(|v| v * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, dy),
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[*a].value;
                    acc(
                        &mut grads,
                        *a,
                        zip(&dy, x, |g, p| if p > 0.0 { g } else { g * slope }),
                    );
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, zip(&dy, &node.value, |g, s| g * s * (1.0 - s))),
                Op::Square(a) => {
                    let x = &self.nodes[*a].value;
                    acc(&mut grads, *a, zip(&dy, x, |g, p| 2.0 * g * p));
                }
                Op::Sqrt(a) => acc(&mut grads, *a, zip(&dy, &node.value, |g, s| g / (2.0 * s))),
                Op::Sum(a) => {
                    let x = &self.nodes[*a].value;
                    acc(&mut grads, *a, Tensor::full(x.shape(), dy.item()));
                }
                Op::Mean(a) => {
                    let x = &self.nodes[*a].value;
                    acc(&mut grads, *a, Tensor::full(x.shape(), dy.item() / x.len() as f64));
                }
                Op::SumCols(a) => {
                    let x = &self.nodes[*a].value;
                    let m = x.cols();
                    let mut g = Tensor::zeros(x.shape());
                    for (r, row) in g.data_mut().chunks_mut(m).enumerate() {
                        row.fill(dy.data()[r]);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::ConcatCols(a, b) => {
                    let p = self.nodes[*a].value.cols();
                    let q = self.nodes[*b].value.cols();
                    if self.rg(*a) {
                        acc(&mut grads, *a, cols_of(&dy, 0, p, self.nodes[*a].value.shape()));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, cols_of(&dy, p, p + q, self.nodes[*b].value.shape()));
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let x = &self.nodes[*a].value;
                    let m = x.cols();
                    let w = end - start;
                    let mut g = Tensor::zeros(x.shape());
                    for (r, row) in g.data_mut().chunks_mut(m).enumerate() {
                        row[*start..*end].copy_from_slice(&dy.data()[r * w..(r + 1) * w]);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::GatherRows(a, idx) => {
                    let x = &self.nodes[*a].value;
                    let m = x.cols();
                    let mut g = Tensor::zeros(x.shape());
                    let gd = g.data_mut();
                    for (k, &i) in idx.iter().enumerate() {
                        for c in 0..m {
                            gd[i * m + c] += dy.data()[k * m + c];
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::LogSoftmax(a) => {
                    let m = node.value.cols();
                    let mut g = dy.clone();
                    for (row_g, row_y) in g.data_mut().chunks_mut(m).zip(node.value.data().chunks(m)) {
                        let s: f64 = row_g.iter().sum();
                        for (gv, yv) in row_g.iter_mut().zip(row_y) {
                            *gv -= yv.exp() * s;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::PickCols(a, idx) => {
                    let x = &self.nodes[*a].value;
                    let m = x.cols();
                    let mut g = Tensor::zeros(x.shape());
                    for (r, &c) in idx.iter().enumerate() {
                        g.data_mut()[r * m + c] = dy.data()[r];
                    }
                    acc(&mut grads, *a, g);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("zip shape")
}

fn cols_of(t: &Tensor, start: usize, end: usize, shape: &[usize]) -> Tensor {
    let n = t.rows();
    let mut data = Vec::with_capacity(n * (end - start));
    for r in 0..n {
        data.extend_from_slice(&t.row(r)[start..end]);
    }
    Tensor::new(shape.to_vec(), data).expect("cols_of")
}

/// `a (n x k) * b (k x m)`.
/// `op(a) * op(b)` through a blocked kernel. Each operand is read either
/// as stored or transposed, via strides.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (n, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, m) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "inner dimensions");
    let mut out = vec![0.0; n * m];
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    if n > 0 && m > 0 && k > 0 {
        // SAFETY: strides and extents describe the owned buffers exactly.
        unsafe {
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                m as isize,
                1,
            );
        }
    }
    Tensor::matrix(n, m, out).expect("gemm")
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    gemm(a, false, b, false)
}

/// `a (n x m) * b^T` where `b` is `k x m`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    gemm(a, false, b, true)
}

/// `a^T * b` where `a` is `n x k` and `b` is `n x m`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    gemm(a, true, b, false)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.get(i, j);
        }
    }
    Tensor::matrix(m, n, out).expect("transpose")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn square_sum_gradient() {
        let p = Parameter::new(ParamId(0), "x", row(&[1.0, 2.0]));
        let mut g = Graph::new();
        let x = g.param(&p, true);
        let sq = g.square(x);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let p = Parameter::new(ParamId(3), "x", row(&[-4.0, 0.5, 9.0]));
        let mut g = Graph::new();
        let x = g.param(&p, true);
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(ParamId(3)).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_reports_offending_node() {
        let p = Parameter::new(ParamId(0), "x", row(&[-1.0]));
        let mut g = Graph::new();
        let x = g.param(&p, true);
        let s = g.sqrt(x);
        let l = g.sum(s);
        match g.backward(l) {
            Err(Error::Numeric { node, op, .. }) => {
                assert_eq!(node, s.index());
                assert_eq!(op, "sqrt");
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn frozen_params_become_constants() {
        let mut p = Parameter::new(ParamId(0), "x", row(&[1.0]));
        p.frozen = true;
        let mut g = Graph::new();
        let x = g.param(&p, true);
        let l = g.sum(x);
        assert!(g.backward(l).unwrap().is_empty());
    }

    #[test]
    fn shared_parameter_accumulates() {
        let p = Parameter::new(ParamId(0), "x", row(&[3.0]));
        let mut g = Graph::new();
        let a = g.param(&p, true);
        let b = g.param(&p, true);
        let m = g.mul(a, b);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[6.0]);
    }
}
