use std::sync::Arc;

use super::tensor::{sigmoid, softplus, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `b`'s shape is a suffix of `a`'s; `b` repeats along the leading axes.
    AddBroadcast(NodeId, NodeId),
    MulBroadcast(NodeId, NodeId),
    ConcatLast(Vec<NodeId>),
    GatherRows(NodeId, Arc<Vec<usize>>),
    SliceLast {
        input: NodeId,
        start: usize,
        end: usize,
    },
    Reshape(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::ConcatLast(..) => "concat",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceLast { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "reduce_sum",
            Op::Mean(..) => "reduce_mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    op: Op,
    value: Tensor<T>,
    is_param: bool,
    requires_grad: bool,
}

/// An eagerly evaluated computation: every op computes its value when it is
/// recorded, and nodes only reference earlier nodes.
#[derive(Debug, Clone)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the parameter leaves of a graph.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, zeros if it did not influence the loss.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn broadcast_suffix(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&last, lead)) => (lead.iter().product(), last),
        None => (1, 1),
    }
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Bytes held by node values, the working-set size of the forward pass.
    pub fn value_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.len() * std::mem::size_of::<T>())
            .sum()
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            is_param: true,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            is_param: false,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor<T>, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::Numerical(format!(
                "{} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            is_param: false,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(T) -> T) -> Result<NodeId> {
        let value = self.value(a).map(f);
        self.push(op, value, &[a])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        self.same_shape(op.name(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, value, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        self.push(Op::MatMul(a, b), value, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn broadcast(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_suffix(sa, sb) {
            return Err(Error::Shape {
                op: op.name(),
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let inner = vb.len().max(1);
        let data = va
            .data()
            .chunks(inner)
            .flat_map(|chunk| chunk.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, value, &[a, b])
    }

    /// `a + b` with `b` repeated along `a`'s leading axes.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast(a, b, Op::AddBroadcast(a, b), |x, y| x + y)
    }

    /// `a * b` with `b` repeated along `a`'s leading axes.
    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast(a, b, Op::MulBroadcast(a, b), |x, y| x * y)
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(Op::ConcatLast(parts.to_vec()), value, parts)
    }

    /// Rows of a 2-D table; an empty index list gives a `0 × d` tensor.
    pub fn gather_rows(&mut self, table: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::contract(format!(
                "gather_rows needs a 2-D table, got {s:?}"
            )));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Bounds {
                what: "gather_rows table",
                index: bad,
                len: rows,
            });
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![idx.len(), d], data)?;
        self.push(Op::GatherRows(table, idx), value, &[table])
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, input: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.shape(input).to_vec();
        let (rows, w) = split_last(&s);
        if s.is_empty() || start >= end || end > w {
            return Err(Error::contract(format!(
                "slice {start}..{end} of last axis in {s:?}"
            )));
        }
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * w + start..r * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let value = Tensor::new(shape, data)?;
        self.push(Op::SliceLast { input, start, end }, value, &[input])
    }

    pub fn reshape(&mut self, input: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let value = self.value(input).reshape(shape)?;
        self.push(Op::Reshape(input), value, &[input])
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let f = T::of(factor);
        self.unary(input, Op::Scale(input, factor), |x| x * f)
    }

    pub fn add_scalar(&mut self, input: NodeId, shift: f64) -> Result<NodeId> {
        let s = T::of(shift);
        self.unary(input, Op::AddScalar(input), |x| x + s)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a), T::ln)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Abs(a), T::abs)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sqrt(a), T::sqrt)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(total), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::contract("reduce_mean of an empty tensor"));
        }
        let total: T = v.data().iter().copied().sum();
        let mean = total / T::of(v.len() as f64);
        self.push(Op::Mean(a), Tensor::scalar(mean), &[a])
    }

    /// Reverse-mode gradients of the scalar at `loss` for every parameter leaf.
    /// A graph supports a single backward pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.is_param {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match g {
                Some(g) if node.is_param => Tensor::new(node.value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |n: NodeId| self.nodes[n.0].value.data();

        let mut accumulate = |target: NodeId, contribution: Vec<T>| {
            if !self.wants(target) {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contribution) {
                        *a = *a + c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        let elementwise = |a: NodeId, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            // f(grad, input, output)
            g.iter()
                .zip(val(a))
                .zip(out)
                .map(|((&gi, &x), &y)| f(gi, x, y))
                .collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    accumulate(*a, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == T::zero() {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d = *d + a_ip * gv;
                            }
                        }
                    }
                    accumulate(*b, db);
                }
            }
            Op::Add(a, b) => {
                accumulate(*a, g.to_vec());
                accumulate(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(*a, g.to_vec());
                accumulate(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(*a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
                }
                if self.wants(*b) {
                    accumulate(*b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddBroadcast(a, b) => {
                accumulate(*a, g.to_vec());
                if self.wants(*b) {
                    let inner = val(*b).len().max(1);
                    let mut db = vec![T::zero(); val(*b).len()];
                    for chunk in g.chunks(inner) {
                        for (d, &x) in db.iter_mut().zip(chunk) {
                            *d = *d + x;
                        }
                    }
                    accumulate(*b, db);
                }
            }
            Op::MulBroadcast(a, b) => {
                let bv = val(*b);
                let inner = bv.len().max(1);
                if self.wants(*a) {
                    let da = g
                        .chunks(inner)
                        .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x * y))
                        .collect();
                    accumulate(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for (gc, ac) in g.chunks(inner).zip(val(*a).chunks(inner)) {
                        for ((d, &x), &y) in db.iter_mut().zip(gc).zip(ac) {
                            *d = *d + x * y;
                        }
                    }
                    accumulate(*b, db);
                }
            }
            Op::ConcatLast(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = g.len().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for &p in parts {
                    let w = *self.nodes[p.0].value.shape().last().unwrap();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(p, dp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(table, idx) => {
                let tv = &self.nodes[table.0].value;
                let d = tv.shape()[1];
                let mut dt = vec![T::zero(); tv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, &x) in dt[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                    {
                        *dst = *dst + x;
                    }
                }
                accumulate(*table, dt);
            }
            Op::SliceLast { input, start, end } => {
                let iv = &self.nodes[input.0].value;
                let w = *iv.shape().last().unwrap();
                let width = end - start;
                let mut di = vec![T::zero(); iv.len()];
                for (r, chunk) in g.chunks(width).enumerate() {
                    di[r * w + start..r * w + end].copy_from_slice(chunk);
                }
                accumulate(*input, di);
            }
            Op::Reshape(a) => accumulate(*a, g.to_vec()),
            Op::Scale(a, f) => {
                let f = T::of(*f);
                accumulate(*a, g.iter().map(|&x| x * f).collect());
            }
            Op::AddScalar(a) => accumulate(*a, g.to_vec()),
            Op::Relu(a) => accumulate(
                *a,
                elementwise(*a, &|gi, x, _| if x > T::zero() { gi } else { T::zero() }),
            ),
            Op::Softplus(a) => accumulate(*a, elementwise(*a, &|gi, x, _| gi * sigmoid(x))),
            Op::Exp(a) => accumulate(*a, elementwise(*a, &|gi, _, y| gi * y)),
            Op::Log(a) => accumulate(*a, elementwise(*a, &|gi, x, _| gi / x)),
            Op::Abs(a) => accumulate(
                *a,
                elementwise(*a, &|gi, x, _| {
                    if x > T::zero() {
                        gi
                    } else if x < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Square(a) => accumulate(*a, elementwise(*a, &|gi, x, _| gi * (x + x))),
            Op::Sqrt(a) => accumulate(*a, elementwise(*a, &|gi, _, y| gi / (y + y))),
            Op::Sum(a) => accumulate(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                accumulate(*a, vec![g[0] / T::of(n as f64); n]);
            }
        }
    }
}
