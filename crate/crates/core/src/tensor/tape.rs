//! Reverse-mode tape over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! valid topological order and [`backward`] is a single reverse sweep.

use super::{matmul_into, Tensor, ZERO_NORM};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

impl Bcast {
    fn of(a: [usize; 2], b: [usize; 2]) -> Option<Self> {
        if a == b {
            Some(Self::Same)
        } else if b == [1, 1] {
            Some(Self::Scalar)
        } else if b[0] == 1 && b[1] == a[1] {
            Some(Self::Row)
        } else if b[1] == 1 && b[0] == a[0] {
            Some(Self::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Self::Same => i * cols + j,
            Self::Row => j,
            Self::Col => i,
            Self::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Max(Var),
    Min(Var),
    ConcatCols(Var, Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    NormalizeRows(Var),
    PickRows(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b, _)
            | Op::Sub(a, b, _)
            | Op::Mul(a, b, _)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Gelu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softplus(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Max(a)
            | Op::Min(a)
            | Op::Row(a, _)
            | Op::NormalizeRows(a)
            | Op::PickRows(a, _) => vec![*a],
            Op::StackRows(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_FLOOR: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn first_arg_by(data: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in data.iter().enumerate() {
        if better(v, data[best]) {
            best = i;
        }
    }
    best
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad;
        self.push(t.detached(), Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.detached();
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let ng = self.grad_any(&[a]);
        self.push(value, op, ng)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        make: fn(Var, Var, Bcast) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let kind = Bcast::of(sa, sb).ok_or(Error::Shape {
            op: name,
            left: sa,
            right: sb,
        })?;
        let cols = sa[1];
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        let mut out = Vec::with_capacity(av.len());
        for i in 0..sa[0] {
            for j in 0..cols {
                out.push(f(av[i * cols + j], bv[kind.index(i, j, cols)]));
            }
        }
        let value = Tensor::new(sa[0], sa[1], out)?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, make(a, b, kind), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a + b`; `b` may be the same shape, a row, a column or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.grad_any(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = super::softmax_rows(self.value(a));
        let ng = self.grad_any(&[a]);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), gelu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log with inputs clamped at 1e-12 (zero gradient below the floor).
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.max(LN_FLOOR).ln())
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.max(0.0).sqrt())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.grad_any(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        let ng = self.grad_any(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Mean over rows: `p×q -> 1×q`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (p, q) = (t.rows(), t.cols());
        let mut out = vec![0.0; q];
        for row in t.data.chunks(q) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= p as f64;
        }
        let ng = self.grad_any(&[a]);
        self.push(Tensor::new(1, q, out).expect("q > 0"), Op::MeanRows(a), ng)
    }

    pub fn max(&mut self, a: Var) -> Var {
        let d = &self.value(a).data;
        let m = d[first_arg_by(d, |x, y| x > y)];
        let ng = self.grad_any(&[a]);
        self.push(Tensor::scalar(m), Op::Max(a), ng)
    }

    pub fn min(&mut self, a: Var) -> Var {
        let d = &self.value(a).data;
        let m = d[first_arg_by(d, |x, y| x < y)];
        let ng = self.grad_any(&[a]);
        self.push(Tensor::scalar(m), Op::Min(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                left: ta.shape,
                right: tb.shape,
            });
        }
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            out.extend_from_slice(ta.row_slice(r));
            out.extend_from_slice(tb.row_slice(r));
        }
        let value = Tensor::new(ta.rows(), ta.cols() + tb.cols(), out)?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::ConcatCols(a, b), ng))
    }

    /// Row `i` of `a` as a `1×q` tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.rows() {
            return Err(Error::Input(format!("row {i} out of range for {:?}", t.shape)));
        }
        let value = Tensor::row(t.row_slice(i))?;
        let ng = self.grad_any(&[a]);
        Ok(self.push(value, Op::Row(a, i), ng))
    }

    /// Stacks `1×q` rows into an `n×q` tensor.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("stack_rows needs at least one row".into()))?;
        let s0 = self.shape(*first);
        let mut out = Vec::with_capacity(rows.len() * s0[1]);
        for &r in rows {
            let s = self.shape(r);
            if s[0] != 1 || s[1] != s0[1] {
                return Err(Error::Shape {
                    op: "stack_rows",
                    left: s0,
                    right: s,
                });
            }
            out.extend_from_slice(&self.value(r).data);
        }
        let value = Tensor::new(rows.len(), s0[1], out)?;
        let ng = self.grad_any(rows);
        Ok(self.push(value, Op::StackRows(rows.to_vec()), ng))
    }

    /// Scales each row to unit L2 norm; rows with norm below 1e-12 become zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).detached();
        let q = value.cols();
        for row in value.data.chunks_mut(q) {
            let n = super::norm(row);
            if n < ZERO_NORM {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let ng = self.grad_any(&[a]);
        self.push(value, Op::NormalizeRows(a), ng)
    }

    /// Picks `a[i, idx[i]]` for each row, giving a `p×1` column.
    pub fn pick_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() || idx.iter().any(|&j| j >= t.cols()) {
            return Err(Error::Input(format!(
                "pick_rows: {} indices for {:?}",
                idx.len(),
                t.shape
            )));
        }
        let vals: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let value = Tensor::column(&vals)?;
        let ng = self.grad_any(&[a]);
        Ok(self.push(value, Op::PickRows(a, idx.to_vec()), ng))
    }
}

/// Gradients of a scalar output with respect to every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: impl IntoIterator<Item = f64>, len: usize) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    for (gi, c) in g.iter_mut().zip(contrib) {
        *gi += c;
    }
}

fn reduce_bcast(g: &[f64], shape: [usize; 2], kind: Bcast, target_len: usize) -> Vec<f64> {
    if kind == Bcast::Same {
        return g.to_vec();
    }
    let cols = shape[1];
    let mut out = vec![0.0; target_len];
    for i in 0..shape[0] {
        for j in 0..cols {
            out[kind.index(i, j, cols)] += g[i * cols + j];
        }
    }
    out
}

/// Reverse sweep from a scalar `output`.
pub fn backward(tape: &Tape, output: Var) -> Result<Gradients> {
    let out_shape = tape.shape(output);
    if out_shape != [1, 1] {
        return Err(Error::Usage(format!(
            "backward needs a scalar output, got {out_shape:?}"
        )));
    }
    let n = output.0 + 1;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
    if tape.nodes[output.0].needs_grad {
        grads[output.0] = Some(vec![1.0]);
    }

    for idx in (0..n).rev() {
        let node = &tape.nodes[idx];
        if !node.needs_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = grads[idx].take() else { continue };
        let y = &node.value;
        let val = |v: Var| &tape.nodes[v.0].value;
        let wants = |v: Var| tape.nodes[v.0].needs_grad;

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    let bt = tb.transpose();
                    let mut ga = vec![0.0; p * q];
                    matmul_into(&g, &bt.data, &mut ga, p, r, q);
                    accumulate(&mut grads[a.0], ga, p * q);
                }
                if wants(*b) {
                    let at = ta.transpose();
                    let mut gb = vec![0.0; q * r];
                    matmul_into(&at.data, &g, &mut gb, q, p, r);
                    accumulate(&mut grads[b.0], gb, q * r);
                }
            }
            Op::Add(a, b, k) | Op::Sub(a, b, k) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.iter().copied(), g.len());
                }
                if wants(*b) {
                    let lb = val(*b).len();
                    let red = reduce_bcast(&g, y.shape, *k, lb);
                    accumulate(&mut grads[b.0], red.into_iter().map(|v| sign * v), lb);
                }
            }
            Op::Mul(a, b, k) => {
                let (ta, tb) = (val(*a), val(*b));
                let cols = y.cols();
                if wants(*a) {
                    let ga: Vec<f64> = (0..g.len())
                        .map(|e| g[e] * tb.data[k.index(e / cols, e % cols, cols)])
                        .collect();
                    accumulate(&mut grads[a.0], ga, g.len());
                }
                if wants(*b) {
                    let prod: Vec<f64> = g.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                    let red = reduce_bcast(&prod, y.shape, *k, tb.len());
                    accumulate(&mut grads[b.0], red, tb.len());
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.iter().map(|v| v * c), g.len());
            }
            Op::Transpose(a) => {
                let gt = Tensor {
                    shape: y.shape,
                    data: g,
                    requires_grad: false,
                    grad: None,
                }
                .transpose();
                let len = gt.len();
                accumulate(&mut grads[a.0], gt.data, len);
            }
            Op::SoftmaxRows(a) => {
                let q = y.cols();
                let mut ga = vec![0.0; g.len()];
                for ((yr, gr), out) in y.data.chunks(q).zip(g.chunks(q)).zip(ga.chunks_mut(q)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads[a.0], ga, g.len());
            }
            Op::Tanh(a) => {
                let it = g.iter().zip(&y.data).map(|(gv, yv)| gv * (1.0 - yv * yv));
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Sigmoid(a) => {
                let it = g.iter().zip(&y.data).map(|(gv, yv)| gv * yv * (1.0 - yv));
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Gelu(a) => {
                let it = g.iter().zip(&val(*a).data).map(|(gv, x)| gv * gelu_grad(*x));
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Exp(a) => {
                let it = g.iter().zip(&y.data).map(|(gv, yv)| gv * yv);
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Ln(a) => {
                let it = g.iter().zip(&val(*a).data).map(|(gv, x)| {
                    if *x > LN_FLOOR {
                        gv / x
                    } else {
                        0.0
                    }
                });
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Softplus(a) => {
                let it = g.iter().zip(&val(*a).data).map(|(gv, x)| gv * sigmoid(*x));
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Sqrt(a) => {
                let it = g.iter().zip(&y.data).map(|(gv, yv)| {
                    if *yv > 0.0 {
                        0.5 * gv / yv
                    } else {
                        0.0
                    }
                });
                accumulate(&mut grads[a.0], it, g.len());
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                accumulate(&mut grads[a.0], std::iter::repeat(g[0]), len);
            }
            Op::Mean(a) => {
                let len = val(*a).len();
                let v = g[0] / len as f64;
                accumulate(&mut grads[a.0], std::iter::repeat(v), len);
            }
            Op::MeanRows(a) => {
                let ta = val(*a);
                let (p, q) = (ta.rows(), ta.cols());
                let it = (0..p * q).map(|e| g[e % q] / p as f64);
                accumulate(&mut grads[a.0], it, p * q);
            }
            Op::Max(a) | Op::Min(a) => {
                let d = &val(*a).data;
                let pos = if matches!(node.op, Op::Max(_)) {
                    first_arg_by(d, |x, y| x > y)
                } else {
                    first_arg_by(d, |x, y| x < y)
                };
                let slot = grads[a.0].get_or_insert_with(|| vec![0.0; d.len()]);
                slot[pos] += g[0];
            }
            Op::ConcatCols(a, b) => {
                let (qa, qb) = (val(*a).cols(), val(*b).cols());
                let q = qa + qb;
                if wants(*a) {
                    let it = g.chunks(q).flat_map(|r| r[..qa].to_vec());
                    accumulate(&mut grads[a.0], it, val(*a).len());
                }
                if wants(*b) {
                    let it = g.chunks(q).flat_map(|r| r[qa..].to_vec());
                    accumulate(&mut grads[b.0], it, val(*b).len());
                }
            }
            Op::Row(a, i) => {
                let ta = val(*a);
                let q = ta.cols();
                let slot = grads[a.0].get_or_insert_with(|| vec![0.0; ta.len()]);
                for (s, gv) in slot[i * q..(i + 1) * q].iter_mut().zip(&g) {
                    *s += gv;
                }
            }
            Op::StackRows(rows) => {
                let q = y.cols();
                for (r, &v) in rows.iter().enumerate() {
                    if wants(v) {
                        accumulate(&mut grads[v.0], g[r * q..(r + 1) * q].iter().copied(), q);
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let q = x.cols();
                let mut ga = vec![0.0; g.len()];
                for r in 0..x.rows() {
                    let n = super::norm(x.row_slice(r));
                    if n < ZERO_NORM {
                        continue;
                    }
                    let yr = &y.data[r * q..(r + 1) * q];
                    let gr = &g[r * q..(r + 1) * q];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..q {
                        ga[r * q + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                accumulate(&mut grads[a.0], ga, g.len());
            }
            Op::PickRows(a, idx) => {
                let ta = val(*a);
                let q = ta.cols();
                let slot = grads[a.0].get_or_insert_with(|| vec![0.0; ta.len()]);
                for (i, &j) in idx.iter().enumerate() {
                    slot[i * q + j] += g[i];
                }
            }
        }
        // Inputs always precede their consumer.
        debug_assert!(node.op.inputs().iter().all(|v| v.0 < idx));
    }

    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let node = &tape.nodes[idx];
        if matches!(node.op, Op::Leaf) && node.needs_grad {
            let data = grads[idx]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            out.push(Some(Tensor {
                shape: node.value.shape,
                data,
                requires_grad: false,
                grad: None,
            }));
        } else {
            out.push(None);
        }
    }
    // Leaves created after `output` cannot influence it but still get a zero gradient.
    for node in &tape.nodes[n..] {
        if matches!(node.op, Op::Leaf) && node.needs_grad {
            out.push(Some(Tensor::zeros(node.value.rows(), node.value.cols())));
        } else {
            out.push(None);
        }
    }
    Ok(Gradients { grads: out })
}
