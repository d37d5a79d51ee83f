//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every op in creation order, so reverse creation order
//! is a valid topological order for the backward sweep. [`Tensor`] is a
//! `Copy` handle into the tape. Shape errors in op construction are
//! programming errors and panic, mirroring ndarray; model-facing APIs
//! validate user inputs before building graphs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::array::{
    broadcast_binary, broadcast_shape, broadcast_to, numel, reduce_to_shape, Array,
};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::param::Param;

type Id = usize;

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sqr,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Softplus,
    Powf(f64),
}

enum Op {
    Leaf,
    Param(Param),
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    AddScalar(Id),
    MulScalar(Id, f64),
    Unary(Id, Unary),
    SumAxes(Id),
    BroadcastTo(Id),
    Reshape(Id),
    Permute(Id, Vec<usize>),
    Narrow { x: Id, axis: usize, start: usize },
    Concat { xs: Vec<Id>, axis: usize },
    SelectRows { x: Id, rows: Vec<usize> },
    MatMul(Id, Id),
    Conv2d { x: Id, w: Id, stride: usize, pad: usize },
    Upsample2x(Id),
    Softmax(Id),
    LogSumExp(Id),
}

struct Node {
    value: Rc<Array>,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Create one per forward pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records gradients for trainable params and variables.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            track: true,
        }
    }

    /// A graph where nothing requires grad (inference, frozen branches).
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            track: false,
        }
    }

    fn push(&self, value: Array, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad: requires_grad && self.track,
        });
        Tensor {
            g: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: Id) -> Rc<Array> {
        self.nodes.borrow()[id].value.clone()
    }

    fn rg(&self, id: Id) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.constant(Array::scalar(v))
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&self, value: Array) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&self, p: &Param) -> Tensor<'_> {
        let trainable = p.is_trainable();
        self.push(p.value(), Op::Param(p.clone()), trainable)
    }

    pub fn concat<'g>(&'g self, xs: &[Tensor<'g>], axis: usize) -> Tensor<'g> {
        assert!(!xs.is_empty(), "concat of nothing");
        let vals: Vec<Rc<Array>> = xs.iter().map(|t| self.value(t.id)).collect();
        let first = vals[0].shape().to_vec();
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for v in &vals {
            let s = v.shape();
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for d in 0..s.len() {
                if d != axis {
                    assert_eq!(s[d], first[d], "concat shape mismatch {s:?} vs {first:?}");
                }
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in &vals {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|t| self.rg(t.id));
        self.push(
            Array::new(&out_shape, data),
            Op::Concat {
                xs: xs.iter().map(|t| t.id).collect(),
                axis,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Tensor<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Array>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Array::full(nodes[loss.id].value.shape(), 1.0));
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let val = |i: Id| &nodes[i].value;
            let rg = |i: Id| nodes[i].requires_grad;
            let mut acc = |i: Id, delta: Array| match &mut grads[i] {
                Some(e) => e.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(id, g);
                }
                Op::Param(p) => {
                    out.params
                        .entry(p.key())
                        .and_modify(|(_, e)| e.add_assign(&g))
                        .or_insert_with(|| (p.clone(), g));
                }
                &Op::Add(a, b) => {
                    if rg(a) {
                        acc(a, reduce_to_shape(&g, val(a).shape()));
                    }
                    if rg(b) {
                        acc(b, reduce_to_shape(&g, val(b).shape()));
                    }
                }
                &Op::Sub(a, b) => {
                    if rg(a) {
                        acc(a, reduce_to_shape(&g, val(a).shape()));
                    }
                    if rg(b) {
                        acc(b, reduce_to_shape(&g, val(b).shape()).map(|v| -v));
                    }
                }
                &Op::Mul(a, b) => {
                    if rg(a) {
                        let d = broadcast_binary(&g, val(b), |x, y| x * y);
                        acc(a, reduce_to_shape(&d, val(a).shape()));
                    }
                    if rg(b) {
                        let d = broadcast_binary(&g, val(a), |x, y| x * y);
                        acc(b, reduce_to_shape(&d, val(b).shape()));
                    }
                }
                &Op::Div(a, b) => {
                    if rg(a) {
                        let d = broadcast_binary(&g, val(b), |x, y| x / y);
                        acc(a, reduce_to_shape(&d, val(a).shape()));
                    }
                    if rg(b) {
                        // d/db (a/b) = -a/b^2 = -y/b
                        let gy = g.zip_map(&node.value, |x, y| -x * y);
                        let d = broadcast_binary(&gy, val(b), |x, y| x / y);
                        acc(b, reduce_to_shape(&d, val(b).shape()));
                    }
                }
                &Op::AddScalar(a) => acc(a, g),
                &Op::MulScalar(a, c) => acc(a, g.map(|v| v * c)),
                &Op::Unary(a, u) => {
                    let x = val(a);
                    let y = &node.value;
                    let d = match u {
                        Unary::Neg => g.map(|v| -v),
                        Unary::Exp => g.zip_map(y, |gv, yv| gv * yv),
                        Unary::Log => g.zip_map(x, |gv, xv| gv / xv),
                        Unary::Sqrt => g.zip_map(y, |gv, yv| 0.5 * gv / yv),
                        Unary::Sqr => g.zip_map(x, |gv, xv| 2.0 * gv * xv),
                        Unary::Relu => g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                        Unary::LeakyRelu(s) => {
                            g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { s * gv })
                        }
                        Unary::Sigmoid => g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)),
                        Unary::Tanh => g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)),
                        Unary::Softplus => g.zip_map(x, |gv, xv| gv * sigmoid(xv)),
                        Unary::Powf(p) => g.zip_map(x, |gv, xv| gv * p * xv.powf(p - 1.0)),
                    };
                    acc(a, d);
                }
                &Op::SumAxes(a) => acc(a, broadcast_to(&g, val(a).shape())),
                &Op::BroadcastTo(a) => acc(a, reduce_to_shape(&g, val(a).shape())),
                &Op::Reshape(a) => acc(a, g.reshape(val(a).shape())),
                Op::Permute(a, perm) => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    acc(*a, g.permute(&inv));
                }
                &Op::Narrow { x, axis, start } => {
                    let xs = val(x).shape().to_vec();
                    let len = g.shape()[axis];
                    let outer: usize = xs[..axis].iter().product();
                    let inner: usize = xs[axis + 1..].iter().product();
                    let mut d = Array::zeros(&xs);
                    let dd = d.data_mut();
                    for o in 0..outer {
                        let dst = (o * xs[axis] + start) * inner;
                        let src = o * len * inner;
                        dd[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    acc(x, d);
                }
                Op::Concat { xs, axis } => {
                    let axis = *axis;
                    let out_shape = g.shape().to_vec();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let mut offset = 0;
                    for &x in xs {
                        let xs_shape = val(x).shape().to_vec();
                        let len = xs_shape[axis];
                        if rg(x) {
                            let mut d = Vec::with_capacity(numel(&xs_shape));
                            for o in 0..outer {
                                let src = (o * out_shape[axis] + offset) * inner;
                                d.extend_from_slice(&g.data()[src..src + len * inner]);
                            }
                            acc(x, Array::new(&xs_shape, d));
                        }
                        offset += len;
                    }
                }
                Op::SelectRows { x, rows } => {
                    let xs = val(*x).shape().to_vec();
                    let inner: usize = xs[1..].iter().product();
                    let mut d = Array::zeros(&xs);
                    let dd = d.data_mut();
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..inner {
                            dd[r * inner + j] += g.data()[k * inner + j];
                        }
                    }
                    acc(*x, d);
                }
                &Op::MatMul(a, b) => {
                    let (da, db) = matmul_backward(val(a), val(b), &g, rg(a), rg(b));
                    if let Some(da) = da {
                        acc(a, da);
                    }
                    if let Some(db) = db {
                        acc(b, db);
                    }
                }
                &Op::Conv2d { x, w, stride, pad } => {
                    let (dx, dw) = conv2d_backward(val(x), val(w), &g, stride, pad, rg(x), rg(w));
                    if let Some(dx) = dx {
                        acc(x, dx);
                    }
                    if let Some(dw) = dw {
                        acc(w, dw);
                    }
                }
                &Op::Upsample2x(a) => {
                    let s = val(a).shape().to_vec();
                    let (n, h, w) = (s[0] * s[1], s[2], s[3]);
                    let mut d = Array::zeros(&s);
                    let dd = d.data_mut();
                    let gd = g.data();
                    for p in 0..n {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                dd[p * h * w + (y / 2) * w + x / 2] +=
                                    gd[p * 4 * h * w + y * 2 * w + x];
                            }
                        }
                    }
                    acc(a, d);
                }
                &Op::Softmax(a) => {
                    let y = &node.value;
                    let last = *y.shape().last().unwrap();
                    let mut d = vec![0.0; y.numel()];
                    for ((dr, yr), gr) in d
                        .chunks_mut(last)
                        .zip(y.data().chunks(last))
                        .zip(g.data().chunks(last))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..last {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(a, Array::new(y.shape(), d));
                }
                &Op::LogSumExp(a) => {
                    let x = val(a);
                    let last = *x.shape().last().unwrap();
                    let y = node.value.data();
                    let mut d = vec![0.0; x.numel()];
                    for (r, (dr, xr)) in d.chunks_mut(last).zip(x.data().chunks(last)).enumerate() {
                        for j in 0..last {
                            let w = if xr[j] == f64::NEG_INFINITY {
                                0.0
                            } else {
                                (xr[j] - y[r]).exp()
                            };
                            dr[j] = g.data()[r] * w;
                        }
                    }
                    acc(a, Array::new(x.shape(), d));
                }
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gradients collected by [`Graph::backward`].
#[derive(Default)]
pub struct Gradients {
    leaves: HashMap<Id, Array>,
    params: HashMap<usize, (Param, Array)>,
}

impl Gradients {
    pub fn wrt(&self, t: Tensor<'_>) -> Option<&Array> {
        self.leaves.get(&t.id)
    }

    pub fn param(&self, p: &Param) -> Option<&Array> {
        self.params.get(&p.key()).map(|(_, g)| g)
    }

    pub fn params(&self) -> impl Iterator<Item = (&Param, &Array)> {
        self.params.values().map(|(p, g)| (p, g))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn param_norm(&self) -> f64 {
        self.params
            .values()
            .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Copyable handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    g: &'g Graph,
    id: Id,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor#{}{:?}", self.id, self.shape())
    }
}

impl<'g> Tensor<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    pub fn value(&self) -> Rc<Array> {
        self.g.value(self.id)
    }

    pub fn to_array(&self) -> Array {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.value().shape()[axis]
    }

    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on non-scalar {:?}", v.shape());
        v.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.g.rg(self.id)
    }

    fn binary(self, other: Tensor<'g>, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor<'g> {
        let v = broadcast_binary(&self.value(), &other.value(), f);
        let rg = self.requires_grad() || other.requires_grad();
        self.g.push(v, op, rg)
    }

    fn unary(self, u: Unary) -> Tensor<'g> {
        let x = self.value();
        let v = match u {
            Unary::Neg => x.map(|v| -v),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => x.map(f64::ln),
            Unary::Sqrt => x.map(f64::sqrt),
            Unary::Sqr => x.map(|v| v * v),
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::LeakyRelu(s) => x.map(|v| if v > 0.0 { v } else { s * v }),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Tanh => x.map(f64::tanh),
            Unary::Softplus => x.map(softplus),
            Unary::Powf(p) => x.map(|v| v.powf(p)),
        };
        self.g.push(v, Op::Unary(self.id, u), self.requires_grad())
    }

    pub fn add(self, o: Tensor<'g>) -> Tensor<'g> {
        self.binary(o, |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Tensor<'g>) -> Tensor<'g> {
        self.binary(o, |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Tensor<'g>) -> Tensor<'g> {
        self.binary(o, |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(self, o: Tensor<'g>) -> Tensor<'g> {
        self.binary(o, |a, b| a / b, Op::Div(self.id, o.id))
    }

    pub fn add_scalar(self, c: f64) -> Tensor<'g> {
        let v = self.value().map(|x| x + c);
        self.g.push(v, Op::AddScalar(self.id), self.requires_grad())
    }

    pub fn mul_scalar(self, c: f64) -> Tensor<'g> {
        let v = self.value().map(|x| x * c);
        self.g.push(v, Op::MulScalar(self.id, c), self.requires_grad())
    }

    pub fn neg(self) -> Tensor<'g> {
        self.unary(Unary::Neg)
    }
    pub fn exp(self) -> Tensor<'g> {
        self.unary(Unary::Exp)
    }
    pub fn log(self) -> Tensor<'g> {
        self.unary(Unary::Log)
    }
    pub fn sqrt(self) -> Tensor<'g> {
        self.unary(Unary::Sqrt)
    }
    pub fn sqr(self) -> Tensor<'g> {
        self.unary(Unary::Sqr)
    }
    pub fn relu(self) -> Tensor<'g> {
        self.unary(Unary::Relu)
    }
    pub fn leaky_relu(self, slope: f64) -> Tensor<'g> {
        self.unary(Unary::LeakyRelu(slope))
    }
    pub fn sigmoid(self) -> Tensor<'g> {
        self.unary(Unary::Sigmoid)
    }
    pub fn tanh(self) -> Tensor<'g> {
        self.unary(Unary::Tanh)
    }
    /// ln(1 + e^x), computed stably.
    pub fn softplus(self) -> Tensor<'g> {
        self.unary(Unary::Softplus)
    }
    pub fn powf(self, p: f64) -> Tensor<'g> {
        self.unary(Unary::Powf(p))
    }
    /// ln(sigmoid(x)) = -softplus(-x)
    pub fn log_sigmoid(self) -> Tensor<'g> {
        self.neg().softplus().neg()
    }

    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Tensor<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut kept = shape.clone();
        for &a in axes {
            kept[a] = 1;
        }
        let v = reduce_to_shape(&x, &kept);
        let t = self.g.push(v, Op::SumAxes(self.id), self.requires_grad());
        if keepdim {
            t
        } else {
            let squeezed: Vec<usize> = shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            t.reshape(&squeezed)
        }
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Tensor<'g> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdim).mul_scalar(1.0 / n as f64)
    }

    pub fn sum_all(self) -> Tensor<'g> {
        let nd = self.shape().len();
        let axes: Vec<usize> = (0..nd).collect();
        self.sum_axes(&axes, false)
    }

    pub fn mean_all(self) -> Tensor<'g> {
        let n = self.value().numel();
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Tensor<'g> {
        let x = self.value();
        assert!(
            broadcast_shape(x.shape(), shape).as_deref() == Some(shape),
            "cannot broadcast {:?} to {shape:?}",
            x.shape()
        );
        let v = broadcast_to(&x, shape);
        self.g.push(v, Op::BroadcastTo(self.id), self.requires_grad())
    }

    pub fn reshape(self, shape: &[usize]) -> Tensor<'g> {
        let v = self.to_array().reshape(shape);
        self.g.push(v, Op::Reshape(self.id), self.requires_grad())
    }

    pub fn permute(self, perm: &[usize]) -> Tensor<'g> {
        let v = self.value().permute(perm);
        self.g
            .push(v, Op::Permute(self.id, perm.to_vec()), self.requires_grad())
    }

    /// Swap the last two axes.
    pub fn t(self) -> Tensor<'g> {
        let nd = self.shape().len();
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Tensor<'g> {
        let x = self.value();
        let xs = x.shape();
        assert!(start + len <= xs[axis], "narrow {start}+{len} beyond {}", xs[axis]);
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * xs[axis] + start) * inner;
            data.extend_from_slice(&x.data()[s..s + len * inner]);
        }
        let mut shape = xs.to_vec();
        shape[axis] = len;
        self.g.push(
            Array::new(&shape, data),
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        )
    }

    /// Gather rows along axis 0.
    pub fn select_rows(self, rows: &[usize]) -> Tensor<'g> {
        let x = self.value();
        let inner: usize = x.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&x.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        self.g.push(
            Array::new(&shape, data),
            Op::SelectRows {
                x: self.id,
                rows: rows.to_vec(),
            },
            self.requires_grad(),
        )
    }

    /// Batched matmul: `[.., m, k] x [.., k, n]`; a 2-d right operand is
    /// shared across the batch.
    pub fn matmul(self, o: Tensor<'g>) -> Tensor<'g> {
        let v = matmul_forward(&self.value(), &o.value());
        let rg = self.requires_grad() || o.requires_grad();
        self.g.push(v, Op::MatMul(self.id, o.id), rg)
    }

    /// NCHW convolution with weight `[O, C, kh, kw]` and zero padding.
    pub fn conv2d(self, w: Tensor<'g>, stride: usize, pad: usize) -> Tensor<'g> {
        let v = conv2d_forward(&self.value(), &w.value(), stride, pad);
        let rg = self.requires_grad() || w.requires_grad();
        self.g.push(
            v,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(self) -> Tensor<'g> {
        let x = self.value();
        let s = x.shape();
        assert_eq!(s.len(), 4, "upsample2x expects NCHW");
        let (n, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut out = vec![0.0; n * 4 * h * w];
        for p in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[p * 4 * h * w + y * 2 * w + xx] = x.data()[p * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        self.g.push(
            Array::new(&[s[0], s[1], 2 * h, 2 * w], out),
            Op::Upsample2x(self.id),
            self.requires_grad(),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Tensor<'g> {
        let x = self.value();
        let last = *x.shape().last().expect("softmax of a scalar");
        let mut out = vec![0.0; x.numel()];
        for (o, r) in out.chunks_mut(last).zip(x.data().chunks(last)) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (ov, &rv) in o.iter_mut().zip(r) {
                *ov = (rv - m).exp();
                s += *ov;
            }
            for ov in o.iter_mut() {
                *ov /= s;
            }
        }
        self.g
            .push(Array::new(x.shape(), out), Op::Softmax(self.id), self.requires_grad())
    }

    /// log(sum(exp(x))) over the last axis, keepdim. `-inf` entries are
    /// treated as absent.
    pub fn logsumexp(self) -> Tensor<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let last = *shape.last().expect("logsumexp of a scalar");
        let mut out = Vec::with_capacity(x.numel() / last.max(1));
        for r in x.data().chunks(last) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let s: f64 = r.iter().map(|&v| (v - m).exp()).sum();
            out.push(m + s.ln());
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = 1;
        self.g
            .push(Array::new(&oshape, out), Op::LogSumExp(self.id), self.requires_grad())
    }

    /// Same value, cut from the tape.
    pub fn detach(self) -> Tensor<'g> {
        self.g.constant(self.to_array())
    }
}

impl<'g> std::ops::Add for Tensor<'g> {
    type Output = Tensor<'g>;
    fn add(self, o: Tensor<'g>) -> Tensor<'g> {
        Tensor::add(self, o)
    }
}

impl<'g> std::ops::Sub for Tensor<'g> {
    type Output = Tensor<'g>;
    fn sub(self, o: Tensor<'g>) -> Tensor<'g> {
        Tensor::sub(self, o)
    }
}

impl<'g> std::ops::Mul for Tensor<'g> {
    type Output = Tensor<'g>;
    fn mul(self, o: Tensor<'g>) -> Tensor<'g> {
        Tensor::mul(self, o)
    }
}

impl<'g> std::ops::Div for Tensor<'g> {
    type Output = Tensor<'g>;
    fn div(self, o: Tensor<'g>) -> Tensor<'g> {
        Tensor::div(self, o)
    }
}

impl<'g> std::ops::Mul<f64> for Tensor<'g> {
    type Output = Tensor<'g>;
    fn mul(self, c: f64) -> Tensor<'g> {
        self.mul_scalar(c)
    }
}

impl<'g> std::ops::Add<f64> for Tensor<'g> {
    type Output = Tensor<'g>;
    fn add(self, c: f64) -> Tensor<'g> {
        self.add_scalar(c)
    }
}

impl<'g> std::ops::Neg for Tensor<'g> {
    type Output = Tensor<'g>;
    fn neg(self) -> Tensor<'g> {
        Tensor::neg(self)
    }
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
    out_shape: Vec<usize>,
}

fn mat_dims(a: &Array, b: &Array) -> MatDims {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs rank >= 2");
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    assert_eq!(k, k2, "matmul inner dims {sa:?} x {sb:?}");
    let batch_a = &sa[..sa.len() - 2];
    let shared_b = sb.len() == 2;
    if !shared_b {
        assert_eq!(batch_a, &sb[..sb.len() - 2], "matmul batch dims {sa:?} x {sb:?}");
    }
    let mut out_shape = batch_a.to_vec();
    out_shape.extend([m, n]);
    MatDims {
        batch: batch_a.iter().product(),
        m,
        k,
        n,
        shared_b,
        out_shape,
    }
}

fn matmul_forward(a: &Array, b: &Array) -> Array {
    let d = mat_dims(a, b);
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.shared_b {
        // fold the batch into the row dimension
        gemm(
            d.batch * d.m,
            d.k,
            d.n,
            a.data(),
            (d.k, 1),
            b.data(),
            (d.n, 1),
            0.0,
            &mut out,
            (d.n, 1),
        );
    } else {
        for i in 0..d.batch {
            gemm(
                d.m,
                d.k,
                d.n,
                &a.data()[i * d.m * d.k..],
                (d.k, 1),
                &b.data()[i * d.k * d.n..],
                (d.n, 1),
                0.0,
                &mut out[i * d.m * d.n..],
                (d.n, 1),
            );
        }
    }
    Array::new(&d.out_shape, out)
}

fn matmul_backward(
    a: &Array,
    b: &Array,
    g: &Array,
    need_a: bool,
    need_b: bool,
) -> (Option<Array>, Option<Array>) {
    let d = mat_dims(a, b);
    let da = need_a.then(|| {
        let mut da = vec![0.0; a.numel()];
        if d.shared_b {
            gemm(
                d.batch * d.m,
                d.n,
                d.k,
                g.data(),
                (d.n, 1),
                b.data(),
                (1, d.n),
                0.0,
                &mut da,
                (d.k, 1),
            );
        } else {
            for i in 0..d.batch {
                gemm(
                    d.m,
                    d.n,
                    d.k,
                    &g.data()[i * d.m * d.n..],
                    (d.n, 1),
                    &b.data()[i * d.k * d.n..],
                    (1, d.n),
                    0.0,
                    &mut da[i * d.m * d.k..],
                    (d.k, 1),
                );
            }
        }
        Array::new(a.shape(), da)
    });
    let db = need_b.then(|| {
        let mut db = vec![0.0; b.numel()];
        if d.shared_b {
            gemm(
                d.k,
                d.batch * d.m,
                d.n,
                a.data(),
                (1, d.k),
                g.data(),
                (d.n, 1),
                0.0,
                &mut db,
                (d.n, 1),
            );
        } else {
            for i in 0..d.batch {
                gemm(
                    d.k,
                    d.m,
                    d.n,
                    &a.data()[i * d.m * d.k..],
                    (1, d.k),
                    &g.data()[i * d.m * d.n..],
                    (d.n, 1),
                    0.0,
                    &mut db[i * d.k * d.n..],
                    (d.n, 1),
                );
            }
        }
        Array::new(b.shape(), db)
    });
    (da, db)
}

fn conv_geom(x: &Array, w: &Array, stride: usize, pad: usize) -> (usize, usize, ConvGeom) {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
    assert_eq!(ws.len(), 4, "conv2d weight must be OCkk, got {ws:?}");
    assert_eq!(xs[1], ws[1], "conv2d channels {xs:?} vs weight {ws:?}");
    assert!(stride >= 1);
    assert!(
        xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3],
        "conv2d kernel larger than padded input"
    );
    (
        xs[0],
        ws[0],
        ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        },
    )
}

fn conv2d_forward(x: &Array, w: &Array, stride: usize, pad: usize) -> Array {
    let (n, o, geom) = conv_geom(x, w, stride, pad);
    let (ho, wo) = geom.out_hw();
    let l = ho * wo;
    let rows = geom.col_rows();
    let plane = geom.channels * geom.height * geom.width;
    let mut out = vec![0.0; n * o * l];
    let mut cols = vec![0.0; rows * l];
    for i in 0..n {
        im2col(&x.data()[i * plane..(i + 1) * plane], &geom, &mut cols);
        gemm(
            o,
            rows,
            l,
            w.data(),
            (rows, 1),
            &cols,
            (l, 1),
            0.0,
            &mut out[i * o * l..],
            (l, 1),
        );
    }
    Array::new(&[n, o, ho, wo], out)
}

fn conv2d_backward(
    x: &Array,
    w: &Array,
    g: &Array,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Array>, Option<Array>) {
    let (n, o, geom) = conv_geom(x, w, stride, pad);
    let (ho, wo) = geom.out_hw();
    let l = ho * wo;
    let rows = geom.col_rows();
    let plane = geom.channels * geom.height * geom.width;
    let mut dx = need_x.then(|| vec![0.0; x.numel()]);
    let mut dw = need_w.then(|| vec![0.0; w.numel()]);
    let mut cols = vec![0.0; rows * l];
    for i in 0..n {
        let gi = &g.data()[i * o * l..(i + 1) * o * l];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[i * plane..(i + 1) * plane], &geom, &mut cols);
            // dW += G_i [o, l] * cols^T [l, rows]
            gemm(o, l, rows, gi, (l, 1), &cols, (1, l), 1.0, dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T [rows, o] * G_i [o, l]
            gemm(rows, o, l, w.data(), (1, rows), gi, (l, 1), 0.0, &mut cols, (l, 1));
            col2im(&cols, &geom, &mut dx[i * plane..(i + 1) * plane]);
        }
    }
    (
        dx.map(|d| Array::new(x.shape(), d)),
        dw.map(|d| Array::new(w.shape(), d)),
    )
}
