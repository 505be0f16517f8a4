//! Dense reverse-mode automatic differentiation over small `f64` tensors.
//!
//! A [`Graph`] records every primitive application eagerly: each call computes
//! the output value immediately and appends a node. Nodes are only ever
//! appended, so the node list is topologically ordered by construction and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use dualsup::ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```
//!
//! Graphs are single-threaded values. Build one per example or batch and drop
//! it after the backward pass.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: input outside the primitive's domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("index {index} out of bounds for axis of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, GradError>;

/// Dense row-major tensor. A scalar has the empty shape `[]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GradError::BadTensor {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Size of one slice along axis 0.
    fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    Scale(Var, f64),
    IndexSelect(Var, Vec<usize>),
    Reshape(Var),
    Clamp(Var, f64, f64),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Concat(xs) => xs.clone(),
            Transpose(a) | Sum(a) | Mean(a) | Log(a) | Exp(a) | Tanh(a) | Sigmoid(a)
            | Softplus(a) | Softmax(a) | Scale(a, _) | IndexSelect(a, _) | Reshape(a)
            | Clamp(a, _, _) => vec![*a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eager computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `None` when the node does not require a gradient or is unreachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zero-filled when the node received none.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor {
                shape,
                data: g.to_vec(),
            },
            None => Tensor::zeros(&shape),
        }
    }
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

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> GradError {
    GradError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
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

    /// Drops every node recorded after the first `len`, so a graph holding
    /// shared leaves can be reused. Vars past `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.push_flagged(value, op, needs_grad)
    }

    fn push_flagged(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_flagged(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_flagged(t, Op::Leaf, false)
    }

    /// Copies the current value into a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(shape_err(name, &[&ta.shape, &tb.shape]));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(out, op))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = &self.nodes[a.0].value;
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| f(*x)).collect(),
        };
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[b.0].value.data.iter().any(|v| *v == 0.0) {
            return Err(GradError::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Matrix product. A 1-D left operand is a row vector and a 1-D right
    /// operand a column vector; the promoted axis is dropped from the result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, a_vec) = match ta.shape.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(shape_err("matmul", &[&ta.shape, &tb.shape])),
        };
        let (k2, n, b_vec) = match tb.shape.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(shape_err("matmul", &[&ta.shape, &tb.shape])),
        };
        if k != k2 {
            return Err(shape_err("matmul", &[&ta.shape, &tb.shape]));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ta.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &av) in row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                for (o, &bv) in dst.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let t = Tensor { shape, data: out };
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let [r, c] = ta.shape[..] else {
            return Err(shape_err("transpose", &[&ta.shape]));
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data[i * c + j];
            }
        }
        let t = Tensor {
            shape: vec![c, r],
            data,
        };
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(first) = xs.first() else {
            return Err(shape_err("concat", &[]));
        };
        let tail = self.nodes[first.0].value.shape.get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for x in xs {
            let t = &self.nodes[x.0].value;
            if t.shape.is_empty() || t.shape[1..] != tail[..] {
                let shapes: Vec<&[usize]> =
                    xs.iter().map(|v| self.nodes[v.0].value.shape.as_slice()).collect();
                return Err(shape_err("concat", &shapes));
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let t = Tensor { shape, data };
        Ok(self.push(t, Op::Concat(xs.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.data.is_empty() {
            return Err(shape_err("mean", &[&t.shape]));
        }
        let s = t.data.iter().sum::<f64>() / t.data.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.data.iter().find(|v| !(**v > 0.0)) {
            return Err(GradError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let w = ta.last_dim();
        if w == 0 || ta.shape.is_empty() {
            return Err(shape_err("softmax", &[&ta.shape]));
        }
        let mut data = ta.data.clone();
        for row in data.chunks_mut(w) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(t, Op::Softmax(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// Selects slices along axis 0 (elements of a vector, rows of a matrix).
    /// Indices may repeat.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape.is_empty() {
            return Err(shape_err("index_select", &[&ta.shape]));
        }
        let rl = ta.row_len();
        let mut data = Vec::with_capacity(indices.len() * rl);
        for &i in indices {
            if i >= ta.shape[0] {
                return Err(GradError::IndexOutOfBounds {
                    index: i,
                    len: ta.shape[0],
                });
            }
            data.extend_from_slice(&ta.data[i * rl..(i + 1) * rl]);
        }
        let mut shape = ta.shape.clone();
        shape[0] = indices.len();
        let t = Tensor { shape, data };
        Ok(self.push(t, Op::IndexSelect(a, indices.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != ta.data.len() {
            return Err(shape_err("reshape", &[&ta.shape, shape]));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: ta.data.clone(),
        };
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Elementwise clamp; the gradient passes through strictly inside
    /// `[lo, hi]` and is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let out_shape = &self.nodes[out.0].value.shape;
        if self.nodes[out.0].value.data.len() != 1 {
            return Err(GradError::NotScalar(out_shape.clone()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);

        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[id].needs_grad {
                *slot = None;
            }
        }
        grads.resize(n, None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value.data;
        let wants = |v: Var| self.nodes[v.0].needs_grad;

        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g / y).collect());
                }
                if wants(*b) {
                    let d = g
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    acc(*b, d);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    // dA[i,p] = sum_j g[i,j] * B[p,j]
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &vb[p * n..(p + 1) * n];
                            da[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, da);
                }
                if wants(*b) {
                    // dB[p,j] = sum_i A[i,p] * g[i,j]
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += av * gv;
                            }
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => {
                let s = &self.nodes[a.0].value.shape;
                let (r, c) = (s[0], s[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                acc(*a, d);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for x in xs {
                    let len = self.nodes[x.0].value.data.len();
                    acc(*x, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                acc(*a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let len = val(*a).len();
                acc(*a, vec![g[0] / len as f64; len]);
            }
            Op::Log(a) => {
                acc(*a, g.iter().zip(val(*a)).map(|(g, x)| g / x).collect());
            }
            Op::Exp(_) | Op::Tanh(_) | Op::Sigmoid(_) | Op::Softplus(_) => {
                let y = &node.value.data;
                let (a, d): (Var, Vec<f64>) = match &node.op {
                    Op::Exp(a) => (*a, g.iter().zip(y).map(|(g, y)| g * y).collect()),
                    Op::Tanh(a) => (*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()),
                    Op::Sigmoid(a) => (*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()),
                    Op::Softplus(a) => (
                        *a,
                        g.iter().zip(val(*a)).map(|(g, x)| g * sigmoid(*x)).collect(),
                    ),
                    _ => unreachable!(),
                };
                acc(a, d);
            }
            Op::Softmax(a) => {
                let y = &node.value.data;
                let w = node.value.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                acc(*a, d);
            }
            Op::Scale(a, c) => {
                acc(*a, g.iter().map(|g| g * c).collect());
            }
            Op::IndexSelect(a, idx) => {
                let src = &self.nodes[a.0].value;
                let rl = src.row_len();
                let mut d = vec![0.0; src.data.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (dv, gv) in d[i * rl..(i + 1) * rl].iter_mut().zip(&g[k * rl..(k + 1) * rl]) {
                        *dv += gv;
                    }
                }
                acc(*a, d);
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Clamp(a, lo, hi) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 })
                    .collect();
                acc(*a, d);
            }
        }
    }
}

/// Central-difference check of the gradient of a scalar-valued graph builder.
///
/// Returns the maximum over all input coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(GradError::NotScalar(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (slot, var) in vars.iter().enumerate() {
        let analytic = grads.tensor(*var);
        for i in 0..probe[slot].len() {
            let orig = probe[slot].data[i];
            probe[slot].data[i] = orig + step;
            let up = eval(&probe)?;
            probe[slot].data[i] = orig - step;
            let down = eval(&probe)?;
            probe[slot].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
