//! Dense tensors and reverse-mode automatic differentiation.
//!
//! `Graph` is a define-by-run tape over 2-D `f32` tensors. Values are
//! computed eagerly at node creation; `backward` walks the tape in reverse.
//! Every vector-Jacobian product is itself expressed in tape ops, so calling
//! `grad_nodes` on a gradient (gradient-of-gradient) works — that is what the
//! diagonal curvature estimator relies on.
//!
//! Storage is `f32`; reductions (matmul inner loops, log-sum-exp, sums, dot
//! products) accumulate in `f64`.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::rc::Rc;

/// Dense row-major tensor. `grad` is populated on leaf nodes by
/// [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f32) -> Self {
        Tensor::new(vec![rows, cols], vec![v; rows * cols])
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::new(vec![1, 1], vec![v])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a `[1,1]` tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    MatMulTN(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddRowBroadcast(NodeId, NodeId),
    SubColBroadcast(NodeId, NodeId),
    MulColBroadcast(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    LogSumExpRows(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    GatherCols(NodeId, Rc<Vec<usize>>),
    ScatterCols(NodeId, Rc<Vec<usize>>, usize),
    Dot(NodeId, NodeId),
    MulScalarNode(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Single-threaded; one graph per training step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn matmul_kernel(
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<f32> {
    // logical A is [m,k] and B is [k,n]; ta/tb say the buffer is stored
    // transposed ([k,m] / [n,k])
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                let av = if ta { a[p * m + i] } else { a[i * k + p] };
                let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                acc += av as f64 * bv as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes and re-arm `backward`.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Leaf gradient after `backward`, if one was produced.
    pub fn grad(&self, id: NodeId) -> Option<&Vec<f32>> {
        self.nodes[id].value.grad.as_ref()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(
            value.data.iter().all(|v| v.is_finite()),
            "non-finite value out of {:?}",
            op
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn unary(&mut self, x: NodeId, op: Op, value: Tensor) -> NodeId {
        let rg = self.requires(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, value: Tensor) -> NodeId {
        let rg = self.requires(a) || self.requires(b);
        self.push(value, op, rg)
    }

    fn assert_same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.nodes[a].value.shape, self.nodes[b].value.shape,
            "{what}: shape mismatch"
        );
    }

    // ── arithmetic ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
        let (k2, n) = (self.nodes[b].value.rows(), self.nodes[b].value.cols());
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let data = matmul_kernel(&self.nodes[a].value.data, &self.nodes[b].value.data, m, k, n, false, false);
        self.binary(a, b, Op::MatMul(a, b), Tensor::matrix(m, n, data))
    }

    /// `a * b^T` for `a:[m,k]`, `b:[n,k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
        let (n, k2) = (self.nodes[b].value.rows(), self.nodes[b].value.cols());
        assert_eq!(k, k2, "matmul_nt: inner dims {k} vs {k2}");
        let data = matmul_kernel(&self.nodes[a].value.data, &self.nodes[b].value.data, m, k, n, false, true);
        self.binary(a, b, Op::MatMulNT(a, b), Tensor::matrix(m, n, data))
    }

    /// `a^T * b` for `a:[k,m]`, `b:[k,n]`.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (k, m) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
        let (k2, n) = (self.nodes[b].value.rows(), self.nodes[b].value.cols());
        assert_eq!(k, k2, "matmul_tn: inner dims {k} vs {k2}");
        let data = matmul_kernel(&self.nodes[a].value.data, &self.nodes[b].value.data, m, k, n, true, false);
        self.binary(a, b, Op::MatMulTN(a, b), Tensor::matrix(m, n, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "add");
        let data = self.zip(a, b, |x, y| x + y);
        let shape = self.nodes[a].value.shape.clone();
        self.binary(a, b, Op::Add(a, b), Tensor::new(shape, data))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "sub");
        let data = self.zip(a, b, |x, y| x - y);
        let shape = self.nodes[a].value.shape.clone();
        self.binary(a, b, Op::Sub(a, b), Tensor::new(shape, data))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "mul");
        let data = self.zip(a, b, |x, y| x * y);
        let shape = self.nodes[a].value.shape.clone();
        self.binary(a, b, Op::Mul(a, b), Tensor::new(shape, data))
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
        self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| -v);
        self.unary(x, Op::Neg(x), value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.map(x, |v| (v as f64 * c) as f32);
        self.unary(x, Op::Scale(x, c), value)
    }

    fn map(&self, x: NodeId, f: impl Fn(f32) -> f32) -> Tensor {
        let v = &self.nodes[x].value;
        Tensor::new(v.shape.clone(), v.data.iter().map(|&a| f(a)).collect())
    }

    /// `x:[m,n] + b:[1,n]`, broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        assert_eq!(self.nodes[b].value.shape, vec![1, n], "add_row_broadcast: bias shape");
        let mut data = self.nodes[x].value.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[b].value.data[j];
            }
        }
        self.binary(x, b, Op::AddRowBroadcast(x, b), Tensor::matrix(m, n, data))
    }

    /// `x:[m,n] - v:[m,1]`, broadcast over columns.
    pub fn sub_col_broadcast(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        assert_eq!(self.nodes[v].value.shape, vec![m, 1], "sub_col_broadcast: vec shape");
        let mut data = self.nodes[x].value.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] -= self.nodes[v].value.data[i];
            }
        }
        self.binary(x, v, Op::SubColBroadcast(x, v), Tensor::matrix(m, n, data))
    }

    /// `x:[m,n] * v:[m,1]`, broadcast over columns.
    pub fn mul_col_broadcast(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        assert_eq!(self.nodes[v].value.shape, vec![m, 1], "mul_col_broadcast: vec shape");
        let mut data = self.nodes[x].value.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= self.nodes[v].value.data[i];
            }
        }
        self.binary(x, v, Op::MulColBroadcast(x, v), Tensor::matrix(m, n, data))
    }

    // ── nonlinearities ──────────────────────────────────────────────

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| v.max(0.0));
        self.unary(x, Op::Relu(x), value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| (v as f64).tanh() as f32);
        self.unary(x, Op::Tanh(x), value)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| (v as f64).exp() as f32);
        self.unary(x, Op::Exp(x), value)
    }

    /// `ln(1 + e^x)`, computed in the overflow-safe form
    /// `max(x,0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| {
            let x = v as f64;
            (x.max(0.0) + (-x.abs()).exp().ln_1p()) as f32
        });
        self.unary(x, Op::Softplus(x), value)
    }

    // ── reductions ──────────────────────────────────────────────────

    /// Row-wise `ln Σ_j e^{x_ij}`, max-shifted: `[m,n] -> [m,1]`.
    pub fn log_sum_exp_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        let mut out = vec![0.0f32; m];
        for i in 0..m {
            let row = self.nodes[x].value.row(i);
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut acc = 0.0f64;
            for &v in row {
                acc += ((v - mx) as f64).exp();
            }
            out[i] = mx + acc.ln() as f32;
        }
        let _ = n;
        self.unary(x, Op::LogSumExpRows(x), Tensor::matrix(m, 1, out))
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        let mut out = vec![0.0f32; m];
        for i in 0..m {
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += self.nodes[x].value.data[i * n + j] as f64;
            }
            out[i] = acc as f32;
        }
        self.unary(x, Op::SumRows(x), Tensor::matrix(m, 1, out))
    }

    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        let mut out = vec![0.0f32; n];
        for j in 0..n {
            let mut acc = 0.0f64;
            for i in 0..m {
                acc += self.nodes[x].value.data[i * n + j] as f64;
            }
            out[j] = acc as f32;
        }
        self.unary(x, Op::SumCols(x), Tensor::matrix(1, n, out))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let acc: f64 = self.nodes[x].value.data.iter().map(|&v| v as f64).sum();
        self.unary(x, Op::SumAll(x), Tensor::scalar(acc as f32))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let len = self.nodes[x].value.len();
        let acc: f64 = self.nodes[x].value.data.iter().map(|&v| v as f64).sum();
        self.unary(x, Op::MeanAll(x), Tensor::scalar((acc / len as f64) as f32))
    }

    /// Per-row column pick: `out[i,0] = x[i, idx[i]]`.
    pub fn gather_cols(&mut self, x: NodeId, idx: Rc<Vec<usize>>) -> NodeId {
        let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
        assert_eq!(idx.len(), m, "gather_cols: one index per row");
        let mut out = vec![0.0f32; m];
        for i in 0..m {
            assert!(idx[i] < n, "gather_cols: index {} out of {} columns", idx[i], n);
            out[i] = self.nodes[x].value.data[i * n + idx[i]];
        }
        self.unary(x, Op::GatherCols(x, idx), Tensor::matrix(m, 1, out))
    }

    /// Inverse of `gather_cols`: spreads `v:[m,1]` into zeros at `(i, idx[i])`.
    pub fn scatter_cols(&mut self, v: NodeId, idx: Rc<Vec<usize>>, n: usize) -> NodeId {
        let m = self.nodes[v].value.rows();
        assert_eq!(self.nodes[v].value.shape, vec![m, 1], "scatter_cols: column vector");
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            out[i * n + idx[i]] = self.nodes[v].value.data[i];
        }
        self.unary(v, Op::ScatterCols(v, idx, n), Tensor::matrix(m, n, out))
    }

    /// Full contraction `Σ a⊙b` over identically shaped tensors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape(a, b, "dot");
        let acc: f64 = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum();
        self.binary(a, b, Op::Dot(a, b), Tensor::scalar(acc as f32))
    }

    /// Multiply every element of `x` by scalar node `s:[1,1]`.
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.nodes[s].value.shape, vec![1, 1], "mul_scalar_node: scalar");
        let sv = self.nodes[s].value.data[0];
        let value = self.map(x, |v| v * sv);
        self.binary(x, s, Op::MulScalarNode(x, s), value)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Gradient of scalar `root` w.r.t. every reachable grad-requiring node,
    /// returned as tape nodes (differentiable in turn).
    pub fn grad_nodes(&mut self, root: NodeId) -> Result<HashMap<NodeId, NodeId>> {
        if self.nodes[root].value.shape != vec![1, 1] {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root].value.shape
            )));
        }
        let horizon = self.nodes.len();
        let mut grads: Vec<Option<NodeId>> = vec![None; horizon];
        let seed = self.constant(Tensor::scalar(1.0));
        grads[root] = Some(seed);

        for i in (0..=root).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let ga = self.matmul_nt(g, b);
                        Self::accumulate(self, &mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.matmul_tn(a, g);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.requires(a) {
                        let ga = self.matmul(g, b);
                        Self::accumulate(self, &mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.matmul_tn(g, a);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::MatMulTN(a, b) => {
                    if self.requires(a) {
                        let ga = self.matmul_nt(b, g);
                        Self::accumulate(self, &mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.matmul(a, g);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        Self::accumulate(self, &mut grads, a, g);
                    }
                    if self.requires(b) {
                        Self::accumulate(self, &mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(a) {
                        Self::accumulate(self, &mut grads, a, g);
                    }
                    if self.requires(b) {
                        let gb = self.neg(g);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let ga = self.mul(g, b);
                        Self::accumulate(self, &mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.mul(g, a);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::Neg(x) => {
                    let gx = self.neg(g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::Scale(x, c) => {
                    let gx = self.scale(g, c);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::AddRowBroadcast(x, b) => {
                    if self.requires(x) {
                        Self::accumulate(self, &mut grads, x, g);
                    }
                    if self.requires(b) {
                        let gb = self.sum_cols(g);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::SubColBroadcast(x, v) => {
                    if self.requires(x) {
                        Self::accumulate(self, &mut grads, x, g);
                    }
                    if self.requires(v) {
                        let s = self.sum_rows(g);
                        let gv = self.neg(s);
                        Self::accumulate(self, &mut grads, v, gv);
                    }
                }
                Op::MulColBroadcast(x, v) => {
                    if self.requires(x) {
                        let gx = self.mul_col_broadcast(g, v);
                        Self::accumulate(self, &mut grads, x, gx);
                    }
                    if self.requires(v) {
                        let prod = self.mul(g, x);
                        let gv = self.sum_rows(prod);
                        Self::accumulate(self, &mut grads, v, gv);
                    }
                }
                Op::Relu(x) => {
                    let mask = self.map(x, |v| if v > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    let gx = self.mul(g, mask);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::Tanh(x) => {
                    // d tanh = 1 - y^2, with y kept on the tape
                    let y = i;
                    let y2 = self.mul(y, y);
                    let shape = self.nodes[x].value.shape.clone();
                    let ones = self.constant(Tensor::new(
                        shape.clone(),
                        vec![1.0; shape.iter().product()],
                    ));
                    let d = self.sub(ones, y2);
                    let gx = self.mul(g, d);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::Exp(x) => {
                    let gx = self.mul(g, i);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::Softplus(x) => {
                    // sigmoid(x) = exp(-softplus(-x))
                    let nx = self.neg(x);
                    let sp = self.softplus(nx);
                    let nsp = self.neg(sp);
                    let sig = self.exp(nsp);
                    let gx = self.mul(g, sig);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::LogSumExpRows(x) => {
                    // d lse = softmax(x), reconstructed from the output node
                    let sm_in = self.sub_col_broadcast(x, i);
                    let sm = self.exp(sm_in);
                    let gx = self.mul_col_broadcast(sm, g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::SumRows(x) => {
                    let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                    let ones = self.constant(Tensor::filled(m, n, 1.0));
                    let gx = self.mul_col_broadcast(ones, g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::SumCols(x) => {
                    let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                    let zeros = self.constant(Tensor::zeros(m, n));
                    let gx = self.add_row_broadcast(zeros, g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::SumAll(x) => {
                    let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                    let ones = self.constant(Tensor::filled(m, n, 1.0));
                    let gx = self.mul_scalar_node(ones, g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::MeanAll(x) => {
                    let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                    let w = self.constant(Tensor::filled(m, n, 1.0 / (m * n) as f32));
                    let gx = self.mul_scalar_node(w, g);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::GatherCols(x, idx) => {
                    let n = self.nodes[x].value.cols();
                    let gx = self.scatter_cols(g, idx, n);
                    Self::accumulate(self, &mut grads, x, gx);
                }
                Op::ScatterCols(v, idx, _n) => {
                    let gv = self.gather_cols(g, idx);
                    Self::accumulate(self, &mut grads, v, gv);
                }
                Op::Dot(a, b) => {
                    if self.requires(a) {
                        let ga = self.mul_scalar_node(b, g);
                        Self::accumulate(self, &mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.mul_scalar_node(a, g);
                        Self::accumulate(self, &mut grads, b, gb);
                    }
                }
                Op::MulScalarNode(x, s) => {
                    if self.requires(x) {
                        let gx = self.mul_scalar_node(g, s);
                        Self::accumulate(self, &mut grads, x, gx);
                    }
                    if self.requires(s) {
                        let gs = self.dot(x, g);
                        Self::accumulate(self, &mut grads, s, gs);
                    }
                }
            }
        }

        let mut out = HashMap::new();
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                out.insert(i, *g);
            }
        }
        Ok(out)
    }

    fn accumulate(graph: &mut Graph, grads: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
        debug_assert_eq!(
            graph.nodes[target].value.shape, graph.nodes[contrib].value.shape,
            "gradient shape mismatch"
        );
        grads[target] = Some(match grads[target] {
            Some(prev) => graph.add(prev, contrib),
            None => contrib,
        });
    }

    /// Populate `.grad` on every grad-requiring leaf reachable from scalar
    /// `root`. A second call without [`Graph::reset`] is an error.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; reset before reuse".into(),
            ));
        }
        let grads = self.grad_nodes(root)?;
        for (node, gnode) in grads {
            if matches!(self.nodes[node].op, Op::Leaf) {
                let g = self.nodes[gnode].value.data.clone();
                self.nodes[node].value.grad = Some(g);
            }
        }
        self.backward_done = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_gradient_is_2x() {
        // L = theta^2 at theta = 3 -> dL/dtheta = 6
        let mut g = Graph::new();
        let theta = g.param(Tensor::scalar(3.0));
        let sq = g.mul(theta, theta);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(theta).unwrap()[0], 6.0);
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(2.0));
        let b = g.param(Tensor::scalar(5.0));
        let sq = g.mul(a, a);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert!(g.grad(b).is_none());
        let _ = b;
    }

    #[test]
    fn backward_twice_without_reset_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.0));
        let loss = g.sum_all(a);
        g.backward(loss).unwrap();
        assert!(g.backward(loss).is_err());
        g.reset();
        assert!(g.is_empty());
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let b = g.relu(a);
        assert!(g.backward(b).is_err());
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let a0 = vec![0.3f32, -0.2, 0.7, 1.1, -0.5, 0.4];
        let b0 = vec![0.9f32, -1.2, 0.1, 0.8, 0.25, -0.75];
        let eval = |av: &[f32], bv: &[f32]| -> f64 {
            let mut g = Graph::new();
            let a = g.param(Tensor::matrix(2, 3, av.to_vec()));
            let b = g.param(Tensor::matrix(3, 2, bv.to_vec()));
            let c = g.matmul(a, b);
            let sq = g.mul(c, c);
            let l = g.sum_all(sq);
            g.value(l).item() as f64
        };
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(2, 3, a0.clone()));
        let b = g.param(Tensor::matrix(3, 2, b0.clone()));
        let c = g.matmul(a, b);
        let sq = g.mul(c, c);
        let l = g.sum_all(sq);
        g.backward(l).unwrap();

        let h = 1e-3f32;
        for i in 0..6 {
            let mut ap = a0.clone();
            let mut am = a0.clone();
            ap[i] += h;
            am[i] -= h;
            let fd = (eval(&ap, &b0) - eval(&am, &b0)) / (2.0 * h as f64);
            let ad = g.grad(a).unwrap()[i] as f64;
            assert!((ad - fd).abs() < 1e-3, "dA[{i}]: ad={ad} fd={fd}");

            let mut bp = b0.clone();
            let mut bm = b0.clone();
            bp[i] += h;
            bm[i] -= h;
            let fd = (eval(&a0, &bp) - eval(&a0, &bm)) / (2.0 * h as f64);
            let bd = g.grad(b).unwrap()[i] as f64;
            assert!((bd - fd).abs() < 1e-3, "dB[{i}]: ad={bd} fd={fd}");
        }
    }

    #[test]
    fn log_sum_exp_matches_naive_and_survives_saturation() {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(2, 2, vec![1000.0, 0.0, 0.3, -0.7]));
        let lse = g.log_sum_exp_rows(x);
        let v = g.value(lse);
        assert!(v.data[0].is_finite());
        assert!((v.data[0] - 1000.0).abs() < 1e-3);
        let naive = ((0.3f64).exp() + (-0.7f64).exp()).ln();
        assert!((v.data[1] as f64 - naive).abs() < 1e-6);
    }

    #[test]
    fn softplus_gradient_is_sigmoid() {
        for &x0 in &[-3.0f64, -0.5, 0.0, 0.8, 4.0] {
            let mut g = Graph::new();
            let x = g.param(Tensor::scalar(x0 as f32));
            let sp = g.softplus(x);
            let l = g.sum_all(sp);
            g.backward(l).unwrap();
            let sig = 1.0 / (1.0 + (-x0).exp());
            assert!((g.grad(x).unwrap()[0] as f64 - sig).abs() < 1e-6);
            let fd = fd_scalar(|v| (1.0 + v.exp()).ln(), x0, 1e-5);
            assert!((g.grad(x).unwrap()[0] as f64 - fd).abs() < 1e-4);
        }
    }

    #[test]
    fn second_order_through_grad_nodes() {
        // L = theta^3: dL = 3 theta^2, d2L = 6 theta; at theta=2 -> 12
        let mut g = Graph::new();
        let theta = g.param(Tensor::scalar(2.0));
        let t2 = g.mul(theta, theta);
        let t3 = g.mul(t2, theta);
        let loss = g.sum_all(t3);
        let grads = g.grad_nodes(loss).unwrap();
        let dl = grads[&theta];
        assert_eq!(g.value(dl).item(), 12.0);
        let grads2 = g.grad_nodes(dl).unwrap();
        let d2l = grads2[&theta];
        assert_eq!(g.value(d2l).item(), 12.0);
    }

    #[test]
    fn hessian_vector_product_on_quadratic_is_exact() {
        // L = 0.5 sum a_i x_i^2 -> H = diag(a); z (+-1) -> z . Hz = a
        let a = [0.5f32, 2.0, -1.5];
        let z = [1.0f32, -1.0, 1.0];
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(1, 3, vec![0.3, -0.8, 0.9]));
        let ac = g.constant(Tensor::matrix(1, 3, a.to_vec()));
        let x2 = g.mul(x, x);
        let ax2 = g.mul(ac, x2);
        let s = g.sum_all(ax2);
        let loss = g.scale(s, 0.5);
        let grads = g.grad_nodes(loss).unwrap();
        let zc = g.constant(Tensor::matrix(1, 3, z.to_vec()));
        let gz = g.dot(grads[&x], zc);
        let hz = g.grad_nodes(gz).unwrap();
        let hz_val = g.value(hz[&x]).data.clone();
        for i in 0..3 {
            assert_eq!(hz_val[i], a[i] * z[i], "Hz[{i}]");
        }
    }
}
