//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Model code is written once against the [`Ops`] trait. Training runs it on a
//! [`Graph`], which records every operation so [`Graph::backward`] can
//! propagate adjoints; inference runs it on [`Eval`], which computes plain
//! tensors and records nothing.

use crate::error::{Error, Result};
use crate::tensor::{self, reduce_to, Tensor};

/// The operation vocabulary shared by recorded and unrecorded execution.
pub trait Ops {
    type Value: Clone;

    /// A value that is never differentiated.
    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// A trainable leaf. On a [`Graph`] it receives a gradient.
    fn param(&mut self, t: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn row_sums(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn col_sums(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn square(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn exp(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn log(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn softplus(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn add_scalar(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn concat_cols(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn broadcast_to(&mut self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn log_softmax(&mut self, a: &Self::Value) -> Result<Self::Value>;

    fn neg(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.scale(a, -1.0)
    }

    /// `x · w + b` with `b` broadcast across rows.
    fn affine(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let xw = self.matmul(x, w)?;
        self.add(&xw, b)
    }
}

/// Unrecorded execution: every value is a plain tensor.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Ops for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn param(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add(a, b)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::sub(a, b)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::mul(a, b)
    }
    fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::div(a, b)
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }
    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(tensor::transpose(a))
    }
    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::sum(a)
    }
    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::mean(a)
    }
    fn row_sums(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::row_sums(a)
    }
    fn col_sums(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::col_sums(a)
    }
    fn square(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::square(a)
    }
    fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::exp(a)
    }
    fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::log(a)
    }
    fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::sigmoid(a)
    }
    fn softplus(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::softplus(a)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        tensor::scale(a, c)
    }
    fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        tensor::add_scalar(a, c)
    }
    fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat_cols(&refs)
    }
    fn broadcast_to(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        tensor::broadcast_to(a, shape)
    }
    fn log_softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::log_softmax(a)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Constant,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    ColSums(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    ConcatCols(Vec<Var>),
    BroadcastTo(Var),
    LogSoftmax(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Param => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Transpose(a) | Sum(a) | Mean(a) | RowSums(a) | ColSums(a) | Square(a) | Exp(a)
            | Log(a) | Sigmoid(a) | Softplus(a) | Scale(a, _) | AddScalar(a, _)
            | BroadcastTo(a) | LogSoftmax(a) => vec![*a],
            ConcatCols(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation record. Node `i` only references nodes `< i`.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if nothing flowed into it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
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

    /// Parent node ids of `v`, all strictly smaller than `v`.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = match &op {
            Op::Param => true,
            Op::Constant => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn forward(&self, op: &Op, leaf: Option<&Tensor>) -> Result<Tensor> {
        use Op::*;
        let v = |x: &Var| self.val(*x);
        match op {
            Constant | Param => Ok(leaf.expect("leaf value").clone()),
            Add(a, b) => tensor::add(v(a), v(b)),
            Sub(a, b) => tensor::sub(v(a), v(b)),
            Mul(a, b) => tensor::mul(v(a), v(b)),
            Div(a, b) => tensor::div(v(a), v(b)),
            MatMul(a, b) => tensor::matmul(v(a), v(b)),
            Transpose(a) => Ok(tensor::transpose(v(a))),
            Sum(a) => tensor::sum(v(a)),
            Mean(a) => tensor::mean(v(a)),
            RowSums(a) => tensor::row_sums(v(a)),
            ColSums(a) => tensor::col_sums(v(a)),
            Square(a) => tensor::square(v(a)),
            Exp(a) => tensor::exp(v(a)),
            Log(a) => tensor::log(v(a)),
            Sigmoid(a) => tensor::sigmoid(v(a)),
            Softplus(a) => tensor::softplus(v(a)),
            Scale(a, c) => tensor::scale(v(a), *c),
            AddScalar(a, c) => tensor::add_scalar(v(a), *c),
            ConcatCols(parts) => {
                let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
                tensor::concat_cols(&refs)
            }
            BroadcastTo(a) => {
                unreachable!("broadcast_to {a:?} replays through its stored shape")
            }
            LogSoftmax(a) => tensor::log_softmax(v(a)),
        }
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.forward(&op, None)?;
        Ok(self.push(op, value))
    }

    /// Recompute every node from the leaves and return the values in order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh = Graph::new();
        for node in &self.nodes {
            let value = match &node.op {
                Op::Constant | Op::Param => node.value.clone(),
                Op::BroadcastTo(a) => tensor::broadcast_to(fresh.val(*a), node.value.shape())?,
                op => fresh.forward(op, None)?,
            };
            fresh.push(node.op.clone(), value);
        }
        Ok(fresh.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.val(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.val(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.val(root).shape(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (parent, pg) in self.local_grads(&node.op, &node.value, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
            // Leaves keep their adjoint for the caller.
            if matches!(node.op, Op::Param) {
                grads[i] = Some(g);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                grads[i] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        use Op::*;
        let v = |x: &Var| self.val(*x);
        let shape = |x: &Var| self.val(*x).shape().to_vec();
        Ok(match op {
            Constant | Param => vec![],
            Add(a, b) => vec![(*a, reduce_to(g, &shape(a))), (*b, reduce_to(g, &shape(b)))],
            Sub(a, b) => vec![
                (*a, reduce_to(g, &shape(a))),
                (*b, reduce_to(&g.map(|x| -x), &shape(b))),
            ],
            Mul(a, b) => vec![
                (*a, reduce_to(&tensor::mul(g, v(b))?, &shape(a))),
                (*b, reduce_to(&tensor::mul(g, v(a))?, &shape(b))),
            ],
            Div(a, b) => {
                let ga = tensor::div(g, v(b))?;
                let gb = tensor::mul(&ga, out)?.map(|x| -x);
                vec![(*a, reduce_to(&ga, &shape(a))), (*b, reduce_to(&gb, &shape(b)))]
            }
            MatMul(a, b) => vec![
                (*a, tensor::matmul(g, &tensor::transpose(v(b)))?),
                (*b, tensor::matmul(&tensor::transpose(v(a)), g)?),
            ],
            Transpose(a) => vec![(*a, tensor::transpose(g).reshape(shape(a))?)],
            Sum(a) => vec![(*a, Tensor::full(&shape(a), g.item()?))],
            Mean(a) => {
                let n = v(a).len() as f64;
                vec![(*a, Tensor::full(&shape(a), g.item()? / n))]
            }
            RowSums(a) | ColSums(a) => vec![(*a, reduce_to_broadcast(g, v(a))?)],
            Square(a) => vec![(*a, tensor::mul(g, &v(a).map(|x| 2.0 * x))?)],
            Exp(a) => vec![(*a, tensor::mul(g, out)?)],
            Log(a) => vec![(*a, tensor::div(g, v(a))?)],
            Sigmoid(a) => vec![(*a, tensor::mul(g, &out.map(|s| s * (1.0 - s)))?)],
            Softplus(a) => vec![(*a, tensor::mul(g, &v(a).map(tensor::sigmoid_scalar))?)],
            Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            AddScalar(a, _) => vec![(*a, g.clone())],
            ConcatCols(parts) => {
                let mut start = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = v(p).cols();
                    res.push((*p, g.slice_cols(start, start + w)?));
                    start += w;
                }
                res
            }
            BroadcastTo(a) => vec![(*a, reduce_to(g, &shape(a)))],
            LogSoftmax(a) => {
                let (r, c) = out.dims();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let gs: f64 = g.row(i).iter().sum();
                    for (gj, oj) in g.row(i).iter().zip(out.row(i)) {
                        data.push(gj - oj.exp() * gs);
                    }
                }
                vec![(*a, Tensor::new(shape(a), data)?)]
            }
        })
    }
}

/// Expand a reduced gradient back over the input it was reduced from.
fn reduce_to_broadcast(g: &Tensor, input: &Tensor) -> Result<Tensor> {
    let (r, c) = input.dims();
    tensor::broadcast_to(g, &[r, c])?.reshape(input.shape().to_vec())
}

impl Ops for Graph {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }
    fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Param, t)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Add(*a, *b))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Sub(*a, *b))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Mul(*a, *b))
    }
    fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Div(*a, *b))
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::MatMul(*a, *b))
    }
    fn transpose(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Transpose(*a))
    }
    fn sum(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Sum(*a))
    }
    fn mean(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Mean(*a))
    }
    fn row_sums(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::RowSums(*a))
    }
    fn col_sums(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::ColSums(*a))
    }
    fn square(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Square(*a))
    }
    fn exp(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Exp(*a))
    }
    fn log(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Log(*a))
    }
    fn sigmoid(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Sigmoid(*a))
    }
    fn softplus(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::Softplus(*a))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(*a, c))
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(*a, c))
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()))
    }
    fn broadcast_to(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let value = tensor::broadcast_to(self.val(*a), shape)?;
        Ok(self.push(Op::BroadcastTo(*a), value))
    }
    fn log_softmax(&mut self, a: &Var) -> Result<Var> {
        self.record(Op::LogSoftmax(*a))
    }
}
