//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together
//! with the computed value. [`Graph::backward`] walks the record in reverse
//! and returns gradients for every leaf created with
//! [`Graph::variable`]. A graph is meant to live for one forward/backward
//! pass and then be dropped.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::ops::linalg::{self, MatmulSpec};
use crate::ops::norm::{self, GroupStats};
use crate::ops::resample;
use crate::ops::Unary;
use crate::real::Real;
use crate::tensor::{broadcast_shape, broadcast_zip, sum_to_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    SumTo(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Narrow { x: usize, axis: usize, start: usize },
    Concat { parts: Vec<usize>, axis: usize },
    MatMul { a: usize, b: usize, spec: MatmulSpec },
    Conv { x: usize, w: usize, b: Option<usize>, spec: ConvSpec },
    AvgPool2(usize),
    Resize(usize),
    GroupNorm { x: usize, gamma: usize, beta: usize, groups: usize, stats: GroupStats<T> },
    Softmax { x: usize, axis: usize },
    L2Normalize { x: usize, axis: usize, eps: f64, norms: Vec<T> },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one differentiable computation.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|&p| nodes[p].requires_grad),
        };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that gradients do not flow into.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, &[])
    }

    /// A leaf that receives a gradient in [`Graph::backward`].
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        v
    }

    pub fn scalar(&self, value: f64) -> Var<'_, T> {
        self.constant(Tensor::scalar(T::of(value)))
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = linalg::concat(&refs, axis);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(out, Op::Concat { parts: ids.clone(), axis }, &ids)
    }

    /// Gradients of the scalar `loss` with respect to every variable leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let needs = |p: usize| nodes[p].requires_grad;
            let val = |p: usize| nodes[p].value.as_ref();
            let mut put = |p: usize, t: Tensor<T>| accumulate(&mut grads, p, t);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Binary(kind, a, b) => {
                    let (a, b) = (*a, *b);
                    let (av, bv) = (val(a), val(b));
                    match kind {
                        Binary::Add | Binary::Sub => {
                            if needs(a) {
                                put(a, sum_to_shape(&g, av.shape()));
                            }
                            if needs(b) {
                                let gb = sum_to_shape(&g, bv.shape());
                                put(b, if *kind == Binary::Sub { gb.map(|x| -x) } else { gb });
                            }
                        }
                        Binary::Mul => {
                            if needs(a) {
                                put(a, sum_to_shape(&broadcast_zip(&g, bv, |x, y| x * y).unwrap(), av.shape()));
                            }
                            if needs(b) {
                                put(b, sum_to_shape(&broadcast_zip(&g, av, |x, y| x * y).unwrap(), bv.shape()));
                            }
                        }
                        Binary::Div => {
                            if needs(a) {
                                put(a, sum_to_shape(&broadcast_zip(&g, bv, |x, y| x / y).unwrap(), av.shape()));
                            }
                            if needs(b) {
                                let go = g.zip_map(&node.value, |x, y| x * y);
                                put(b, sum_to_shape(&broadcast_zip(&go, bv, |x, y| -x / y).unwrap(), bv.shape()));
                            }
                        }
                    }
                }
                Op::Unary(kind, x) => {
                    let xv = val(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(g.data())
                        .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                        .collect();
                    put(*x, Tensor::from_vec(xv.shape().to_vec(), data));
                }
                Op::SumTo(x) => {
                    let shape = val(*x).shape().to_vec();
                    put(*x, expand(&g, &shape));
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    put(*x, g.reshape(shape).expect("reshape grad"));
                }
                Op::Permute(x, perm) => put(*x, linalg::permute(&g, &linalg::inverse_perm(perm))),
                Op::Narrow { x, axis, start } => {
                    let mut d = Tensor::zeros(val(*x).shape().to_vec());
                    linalg::narrow_backward_into(&mut d, &g, *axis, *start);
                    put(*x, d);
                }
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        if needs(p) {
                            put(p, linalg::narrow(&g, *axis, start, len));
                        }
                        start += len;
                    }
                }
                Op::MatMul { a, b, spec } => {
                    let (da, db) = linalg::matmul_backward(val(*a), val(*b), &g, *spec, needs(*a), needs(*b));
                    if let Some(da) = da {
                        put(*a, da);
                    }
                    if let Some(db) = db {
                        put(*b, db);
                    }
                }
                Op::Conv { x, w, b, spec } => {
                    let need_b = b.is_some_and(needs);
                    let (dx, dw, db) = conv2d_backward(val(*x), val(*w), &g, *spec, needs(*x), needs(*w), need_b);
                    if let Some(dx) = dx {
                        put(*x, dx);
                    }
                    if let Some(dw) = dw {
                        put(*w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, db) {
                        put(*b, db);
                    }
                }
                Op::AvgPool2(x) => put(*x, resample::avg_pool2_backward(val(*x).shape(), &g)),
                Op::Resize(x) => put(*x, resample::resize_bilinear_backward(val(*x).shape(), &g)),
                Op::GroupNorm { x, gamma, beta, groups, stats } => {
                    let (dx, dg, db) = norm::group_norm_backward(val(*x), val(*gamma), stats, *groups, &g);
                    if needs(*x) {
                        put(*x, dx);
                    }
                    if needs(*gamma) {
                        put(*gamma, dg);
                    }
                    if needs(*beta) {
                        put(*beta, db);
                    }
                }
                Op::Softmax { x, axis } => put(*x, norm::softmax_backward(&node.value, &g, *axis)),
                Op::L2Normalize { x, axis, eps, norms } => {
                    put(*x, norm::l2_normalize_backward(val(*x), norms, &g, *axis, *eps))
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: usize, t: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(t.data()) {
                *e += *v;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

/// Broadcasts `t` up to `shape`.
pub fn expand<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape() == shape {
        return t.clone();
    }
    broadcast_zip(&Tensor::zeros(shape.to_vec()), t, |_, y| y).expect("expand: incompatible shape")
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads[v.id].as_ref()
    }

    /// Gradient of `v`, or zeros when no path reached it.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[v.id].take()
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Var<'g, T>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }

    fn binary(self, other: Var<'g, T>, kind: Binary) -> Var<'g, T> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let out = match kind {
            Binary::Add => broadcast_zip(&a, &b, |x, y| x + y),
            Binary::Sub => broadcast_zip(&a, &b, |x, y| x - y),
            Binary::Mul => broadcast_zip(&a, &b, |x, y| x * y),
            Binary::Div => broadcast_zip(&a, &b, |x, y| x / y),
        }
        .unwrap_or_else(|e| panic!("{kind:?}: {e}"));
        self.graph.push(out, Op::Binary(kind, self.id, other.id), &[self.id, other.id])
    }

    pub fn unary(self, kind: Unary) -> Var<'g, T> {
        let out = self.value().map(|x| kind.apply(x));
        self.graph.push(out, Op::Unary(kind, self.id), &[self.id])
    }

    pub fn exp(self) -> Self {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Self {
        self.unary(Unary::Ln)
    }
    pub fn sqrt(self) -> Self {
        self.unary(Unary::Sqrt)
    }
    pub fn abs(self) -> Self {
        self.unary(Unary::Abs)
    }
    pub fn square(self) -> Self {
        self.unary(Unary::Square)
    }
    pub fn recip(self) -> Self {
        self.unary(Unary::Recip)
    }
    pub fn sigmoid(self) -> Self {
        self.unary(Unary::Sigmoid)
    }
    pub fn gelu(self) -> Self {
        self.unary(Unary::Gelu)
    }
    pub fn softplus(self) -> Self {
        self.unary(Unary::Softplus)
    }
    pub fn scale(self, s: f64) -> Self {
        self.unary(Unary::Scale(s))
    }
    pub fn add_scalar(self, s: f64) -> Self {
        self.unary(Unary::AddScalar(s))
    }
    /// `1 - x`
    pub fn one_minus(self) -> Self {
        self.scale(-1.0).add_scalar(1.0)
    }

    /// Sums down to a broadcast-compatible `shape` (the inverse of
    /// broadcasting).
    pub fn sum_to(self, shape: &[usize]) -> Self {
        let src = self.shape();
        assert_eq!(
            broadcast_shape(&src, shape).as_deref(),
            Some(src.as_slice()),
            "sum_to: {shape:?} does not broadcast to {src:?}"
        );
        let out = sum_to_shape(&self.value(), shape);
        self.graph.push(out, Op::SumTo(self.id), &[self.id])
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(self, axes: &[usize]) -> Self {
        let mut shape = self.shape();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Self {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes).scale(1.0 / n as f64)
    }

    pub fn sum_all(self) -> Self {
        self.sum_to(&[])
    }

    pub fn mean_all(self) -> Self {
        let n = self.value().numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Self {
        let out = self.value().as_ref().clone().reshape(shape).unwrap_or_else(|e| panic!("{e}"));
        self.graph.push(out, Op::Reshape(self.id), &[self.id])
    }

    pub fn permute(self, perm: &[usize]) -> Self {
        let out = linalg::permute(&self.value(), perm);
        self.graph.push(out, Op::Permute(self.id, perm.to_vec()), &[self.id])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Self {
        let out = linalg::narrow(&self.value(), axis, start, len);
        self.graph.push(out, Op::Narrow { x: self.id, axis, start }, &[self.id])
    }

    /// Splits `axis` into `n` equal chunks.
    pub fn chunk(self, n: usize, axis: usize) -> Vec<Self> {
        let len = self.shape()[axis];
        assert_eq!(len % n, 0, "chunk: axis {axis} of size {len} not divisible by {n}");
        let step = len / n;
        (0..n).map(|i| self.narrow(axis, i * step, step)).collect()
    }

    pub fn matmul_with(self, other: Var<'g, T>, trans_a: bool, trans_b: bool) -> Self {
        self.same_graph(&other);
        let spec = MatmulSpec { trans_a, trans_b };
        let out = linalg::matmul_forward(&self.value(), &other.value(), spec);
        self.graph.push(out, Op::MatMul { a: self.id, b: other.id, spec }, &[self.id, other.id])
    }

    pub fn matmul(self, other: Var<'g, T>) -> Self {
        self.matmul_with(other, false, false)
    }

    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, spec: ConvSpec) -> Self {
        self.same_graph(&weight);
        let out = {
            let bv = bias.map(|b| b.value());
            conv2d_forward(&self.value(), &weight.value(), bv.as_deref(), spec)
        };
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        self.graph.push(
            out,
            Op::Conv {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                spec,
            },
            &parents,
        )
    }

    pub fn avg_pool2(self) -> Self {
        let out = resample::avg_pool2_forward(&self.value());
        self.graph.push(out, Op::AvgPool2(self.id), &[self.id])
    }

    pub fn resize_bilinear(self, height: usize, width: usize) -> Self {
        let out = resample::resize_bilinear_forward(&self.value(), height, width);
        self.graph.push(out, Op::Resize(self.id), &[self.id])
    }

    pub fn group_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, groups: usize, eps: f64) -> Self {
        let (out, stats) = norm::group_norm_forward(&self.value(), &gamma.value(), &beta.value(), groups, eps);
        self.graph.push(
            out,
            Op::GroupNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                groups,
                stats,
            },
            &[self.id, gamma.id, beta.id],
        )
    }

    pub fn softmax(self, axis: usize) -> Self {
        let out = norm::softmax_forward(&self.value(), axis);
        self.graph.push(out, Op::Softmax { x: self.id, axis }, &[self.id])
    }

    /// `x / (||x||_2 + eps)` along `axis`.
    pub fn l2_normalize(self, axis: usize, eps: f64) -> Self {
        let (out, norms) = norm::l2_normalize_forward(&self.value(), axis, eps);
        self.graph.push(out, Op::L2Normalize { x: self.id, axis, eps, norms }, &[self.id])
    }

    /// Copy of the current value that gradients do not flow through.
    pub fn detach(self) -> Self {
        self.graph.constant(self.value().as_ref().clone())
    }
}

macro_rules! impl_binop {
    ($tr:ident, $m:ident, $kind:expr) => {
        impl<'g, T: Real> $tr for Var<'g, T> {
            type Output = Var<'g, T>;
            fn $m(self, rhs: Self) -> Self::Output {
                self.binary(rhs, $kind)
            }
        }
    };
}

impl_binop!(Add, add, Binary::Add);
impl_binop!(Sub, sub, Binary::Sub);
impl_binop!(Mul, mul, Binary::Mul);
impl_binop!(Div, div, Binary::Div);

impl<'g, T: Real> Neg for Var<'g, T> {
    type Output = Var<'g, T>;
    fn neg(self) -> Self::Output {
        self.unary(Unary::Neg)
    }
}
