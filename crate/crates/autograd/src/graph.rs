//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! tape once in reverse and accumulates gradients into the leaves. Graphs are
//! built fresh for each step and dropped afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::param::Param;
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    Gelu(usize),
    Tanh(usize),
    Softmax(usize),
    LogSoftmax(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    Expand(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    MatMul(usize, usize),
    Bmm(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Powf(..) => "pow",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "shift",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::SumAll(_) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Expand(..) => "expand",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::MatMul(..) => "matmul",
            Op::Bmm(..) => "bmm",
            Op::Conv2d { .. } => "conv2d",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// One differentiation tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<HashMap<usize, Tensor>>,
    params: RefCell<HashMap<u64, usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter to this tape. Frozen parameters enter as constants.
    /// Binding the same parameter twice returns the same node.
    pub fn param(&self, p: &Param) -> Var<'_> {
        if p.is_frozen() {
            return self.constant(p.value().clone());
        }
        if let Some(&id) = self.params.borrow().get(&p.key()) {
            return Var { graph: self, id };
        }
        let v = self.leaf(p.value().clone());
        self.params.borrow_mut().insert(p.key(), v.id);
        v
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of all recorded ops, in tape order. Leaves are omitted.
    pub fn op_census(&self) -> Vec<&'static str> {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.op.name())
            .collect()
    }

    /// Accumulated gradient of a leaf, if any has reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.leaf_grads.borrow().get(&v.id).cloned()
    }

    pub(crate) fn param_grad(&self, p: &Param) -> Option<Tensor> {
        let id = *self.params.borrow().get(&p.key())?;
        self.leaf_grads.borrow().get(&id).cloned()
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
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

    fn unary(&self, input: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.nodes.borrow()[input].requires_grad;
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = {
            let nodes = self.nodes.borrow();
            nodes[a].requires_grad || nodes[b].requires_grad
        };
        self.push(value, op, rg)
    }

    fn ternary(&self, inputs: &[usize], value: Tensor, op: Op) -> Var<'_> {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, rg)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// repeated calls until [`Graph::zero_grad`].
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::ones(root_node.value.shape()));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |input: usize, contrib: Tensor| {
                if !nodes[input].requires_grad {
                    return;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    let mut leaf = self.leaf_grads.borrow_mut();
                    match leaf.get_mut(&id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            leaf.insert(id, g);
                        }
                    }
                }
                Op::Add(a, b) => {
                    send(*a, reduce_to(&g, nodes[*a].value.shape()));
                    send(*b, reduce_to(&g, nodes[*b].value.shape()));
                }
                Op::Sub(a, b) => {
                    send(*a, reduce_to(&g, nodes[*a].value.shape()));
                    send(*b, reduce_to(&g.map(|v| -v), nodes[*b].value.shape()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    send(*a, reduce_to(&broadcast_zip(&g, bv, |g, b| g * b), av.shape()));
                    send(*b, reduce_to(&broadcast_zip(&g, av, |g, a| g * a), bv.shape()));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    send(*a, reduce_to(&broadcast_zip(&g, bv, |g, b| g / b), av.shape()));
                    // d(a/b)/db = -out / b
                    let gb = broadcast_zip(&g.zip_map(out, |g, o| -g * o), bv, |v, b| v / b);
                    send(*b, reduce_to(&gb, bv.shape()));
                }
                Op::Neg(a) => send(*a, g.map(|v| -v)),
                Op::Exp(a) => send(*a, g.zip_map(out, |g, o| g * o)),
                Op::Log(a) => send(*a, g.zip_map(&nodes[*a].value, |g, x| g / x)),
                Op::Sqrt(a) => send(*a, g.zip_map(out, |g, o| g * 0.5 / o)),
                Op::Powf(a, p) => {
                    let p = *p;
                    let x = &nodes[*a].value;
                    let d = if p == 2.0 {
                        g.zip_map(x, |g, x| g * 2.0 * x)
                    } else {
                        g.zip_map(x, |g, x| g * p * x.powf(p - 1.0))
                    };
                    send(*a, d)
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|v| v * c))
                }
                Op::Shift(a) => send(*a, g),
                Op::Relu(a) => send(
                    *a,
                    g.zip_map(&nodes[*a].value, |g, x| if x > 0.0 { g } else { 0.0 }),
                ),
                Op::Gelu(a) => send(*a, g.zip_map(&nodes[*a].value, |g, x| g * gelu_grad(x))),
                Op::Tanh(a) => send(*a, g.zip_map(out, |g, o| g * (1.0 - o * o))),
                Op::Softmax(a) => {
                    let n = *out.shape().last().unwrap_or(&1);
                    let mut dx = vec![0.0; out.numel()];
                    for ((d, gr), y) in dx
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(out.data().chunks(n))
                    {
                        let dot: f64 = gr.iter().zip(y).map(|(g, y)| g * y).sum();
                        for ((dv, gv), yv) in d.iter_mut().zip(gr).zip(y) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    send(*a, Tensor::from_vec(out.shape(), dx));
                }
                Op::LogSoftmax(a) => {
                    let n = *out.shape().last().unwrap_or(&1);
                    let mut dx = vec![0.0; out.numel()];
                    for ((d, gr), y) in dx
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(out.data().chunks(n))
                    {
                        let total: f64 = gr.iter().sum();
                        for ((dv, gv), yv) in d.iter_mut().zip(gr).zip(y) {
                            *dv = gv - yv.exp() * total;
                        }
                    }
                    send(*a, Tensor::from_vec(out.shape(), dx));
                }
                Op::SumAll(a) => {
                    send(*a, Tensor::full(nodes[*a].value.shape(), g.item()));
                }
                Op::SumAxis(a, axis) => {
                    let n = nodes[*a].value.shape()[*axis];
                    send(*a, expand_raw(&g, *axis, n));
                }
                Op::Expand(a, axis) => send(*a, sum_axis_raw(&g, *axis)),
                Op::Reshape(a) => send(*a, Tensor::from_vec(nodes[*a].value.shape(), g.into_data())),
                Op::Permute(a, axes) => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    send(*a, g.permute(&inverse));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if nodes[*a].requires_grad {
                        send(*a, Tensor::from_vec(&[m, k], gemm_nt(g.data(), bv.data(), m, n, k)));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, Tensor::from_vec(&[k, n], gemm_tn(av.data(), g.data(), m, k, n)));
                    }
                }
                Op::Bmm(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                    let mut da = Vec::with_capacity(bs * m * k);
                    let mut db = Vec::with_capacity(bs * k * n);
                    for i in 0..bs {
                        let gi = &g.data()[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        da.extend(gemm_nt(gi, bi, m, n, k));
                        db.extend(gemm_tn(ai, gi, m, k, n));
                    }
                    send(*a, Tensor::from_vec(&[bs, m, k], da));
                    send(*b, Tensor::from_vec(&[bs, k, n], db));
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let grads = crate::conv::conv2d_backward(
                        &nodes[*x].value,
                        &nodes[*w].value,
                        &g,
                        *stride,
                        *padding,
                    );
                    send(*x, grads.dx);
                    send(*w, grads.dw);
                    if let Some(b) = b {
                        send(*b, grads.db);
                    }
                }
            }
        }
        Ok(())
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars belong to different graphs"
        );
    }

    // ---- elementwise -------------------------------------------------------

    fn broadcast_binary(
        &self,
        other: &Var<'g>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_graph(other);
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            Ok(a.zip_map(&b, f))
        } else if b.numel() == 1 {
            let s = b.item();
            Ok(a.map(|x| f(x, s)))
        } else if a.numel() == 1 {
            let s = a.item();
            Ok(b.map(|y| f(s, y)))
        } else {
            Err(TensorError::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let v = self.broadcast_binary(other, "add", |a, b| a + b)?;
        Ok(self.graph.binary(self.id, other.id, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let v = self.broadcast_binary(other, "sub", |a, b| a - b)?;
        Ok(self.graph.binary(self.id, other.id, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let v = self.broadcast_binary(other, "mul", |a, b| a * b)?;
        Ok(self.graph.binary(self.id, other.id, v, Op::Mul(self.id, other.id)))
    }

    /// Division. A zero divisor yields ±Inf (or NaN for 0/0).
    pub fn div(&self, other: &Var<'g>) -> Result<Var<'g>> {
        #[cfg(debug_assertions)]
        if other.value().data().contains(&0.0) {
            log::warn!("div: zero divisor produces non-finite values");
        }
        let v = self.broadcast_binary(other, "div", |a, b| a / b)?;
        Ok(self.graph.binary(self.id, other.id, v, Op::Div(self.id, other.id)))
    }

    pub fn neg(&self) -> Var<'g> {
        let v = self.value().map(|x| -x);
        self.graph.unary(self.id, v, Op::Neg(self.id))
    }

    pub fn exp(&self) -> Var<'g> {
        let v = self.value().map(f64::exp);
        self.graph.unary(self.id, v, Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'g>> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.graph.unary(self.id, x.map(f64::ln), Op::Log(self.id)))
    }

    pub fn sqrt(&self) -> Result<Var<'g>> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                msg: format!("negative input {bad}"),
            });
        }
        Ok(self.graph.unary(self.id, x.map(f64::sqrt), Op::Sqrt(self.id)))
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, p: f64) -> Result<Var<'g>> {
        let x = self.value();
        if p.fract() != 0.0 {
            if let Some(bad) = x.data().iter().find(|&&v| v < 0.0) {
                return Err(TensorError::Domain {
                    op: "pow",
                    msg: format!("negative base {bad} with fractional exponent {p}"),
                });
            }
        }
        Ok(self.graph.unary(self.id, x.map(|v| v.powf(p)), Op::Powf(self.id, p)))
    }

    pub fn square(&self) -> Var<'g> {
        let v = self.value().map(|x| x * x);
        self.graph.unary(self.id, v, Op::Powf(self.id, 2.0))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x * c);
        self.graph.unary(self.id, v, Op::Scale(self.id, c))
    }

    /// Addition of a constant.
    pub fn shift(&self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x + c);
        self.graph.unary(self.id, v, Op::Shift(self.id))
    }

    // ---- activations -------------------------------------------------------

    pub fn relu(&self) -> Var<'g> {
        let v = self.value().map(|x| x.max(0.0));
        self.graph.unary(self.id, v, Op::Relu(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'g> {
        let v = self.value().map(gelu);
        self.graph.unary(self.id, v, Op::Gelu(self.id))
    }

    pub fn tanh(&self) -> Var<'g> {
        let v = self.value().map(f64::tanh);
        self.graph.unary(self.id, v, Op::Tanh(self.id))
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&self) -> Var<'g> {
        let x = self.value();
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let v = Tensor::from_vec(x.shape(), out);
        self.graph.unary(self.id, v, Op::Softmax(self.id))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Var<'g> {
        let x = self.value();
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let v = Tensor::from_vec(x.shape(), out);
        self.graph.unary(self.id, v, Op::LogSoftmax(self.id))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.graph.unary(self.id, v, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Result<Var<'g>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(TensorError::Domain {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        Ok(self.sum().scale(1.0 / n as f64))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<usize> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op,
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] == 0 {
            return Err(TensorError::Domain {
                op,
                msg: format!("axis {axis} is empty"),
            });
        }
        Ok(shape[axis])
    }

    /// Sum along `axis`. With `keepdim` the axis stays with size 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'g>> {
        self.check_axis("sum_axis", axis)?;
        let v = sum_axis_raw(&self.value(), axis);
        let kept = self.graph.unary(self.id, v, Op::SumAxis(self.id, axis));
        if keepdim {
            Ok(kept)
        } else {
            let mut shape = self.shape();
            shape.remove(axis);
            kept.reshape(&shape)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'g>> {
        let n = self.check_axis("mean_axis", axis)?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n as f64))
    }

    /// Population variance (divisor = axis length) along `axis`.
    pub fn var_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'g>> {
        let n = self.check_axis("var_axis", axis)?;
        let centered = self.sub(&self.mean_axis(axis, true)?.expand(axis, n)?)?;
        centered.square().mean_axis(axis, keepdim)
    }

    // ---- shape -------------------------------------------------------------

    /// Repeats a size-1 `axis` `n` times.
    pub fn expand(&self, axis: usize, n: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] != 1 {
            let mut target = shape.clone();
            if axis < target.len() {
                target[axis] = n;
            }
            return Err(TensorError::Shape {
                op: "expand",
                lhs: shape,
                rhs: target,
            });
        }
        let v = expand_raw(&self.value(), axis, n);
        Ok(self.graph.unary(self.id, v, Op::Expand(self.id, axis)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshape(shape)?;
        Ok(self.graph.unary(self.id, v, Op::Reshape(self.id)))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank
            && axes.iter().all(|&a| a < rank && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::Shape {
                op: "permute",
                lhs: self.shape(),
                rhs: axes.to_vec(),
            });
        }
        let v = self.value().permute(axes);
        Ok(self.graph.unary(self.id, v, Op::Permute(self.id, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'g>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(TensorError::Axis {
                op: "transpose",
                axis: 1,
                rank,
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.same_graph(other);
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let v = Tensor::from_vec(&[m, n], gemm(a.data(), b.data(), m, k, n));
        Ok(self.graph.binary(self.id, other.id, v, Op::MatMul(self.id, other.id)))
    }

    /// Batched `[b×m×k] · [b×k×n]`.
    pub fn bmm(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.same_graph(other);
        let (a, b) = (self.value(), other.value());
        if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1] {
            return Err(TensorError::Shape {
                op: "bmm",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut out = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            out.extend(gemm(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let v = Tensor::from_vec(&[bs, m, n], out);
        Ok(self.graph.binary(self.id, other.id, v, Op::Bmm(self.id, other.id)))
    }

    /// 2-D cross-correlation of `x[B×C×H×W]` with `w[O×C×kh×kw]` plus an
    /// optional bias `b[O]`.
    pub fn conv2d(
        &self,
        w: &Var<'g>,
        b: Option<&Var<'g>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g>> {
        self.same_graph(w);
        let bias = b.map(|b| {
            self.same_graph(b);
            b.value()
        });
        let v = crate::conv::conv2d_forward(&self.value(), &w.value(), bias.as_deref(), stride, padding)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        let op = Op::Conv2d {
            x: self.id,
            w: w.id,
            b: b.map(|b| b.id),
            stride,
            padding,
        };
        Ok(self.graph.ternary(&inputs, v, op))
    }
}

/// `tanh` through one `exp`; saturates cleanly at ±1.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + fast_tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = fast_tanh(u);
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Elementwise `f(g, other)` where `other` may be a one-element tensor.
fn broadcast_zip(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if other.numel() == 1 && g.numel() != 1 {
        let s = other.item();
        g.map(|v| f(v, s))
    } else if g.numel() == 1 && other.numel() != 1 {
        let s = g.item();
        other.map(|v| f(s, v))
    } else {
        Tensor::from_vec(g.shape(), g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect())
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g.clone()
    } else {
        debug_assert_eq!(shape.iter().product::<usize>(), 1);
        Tensor::from_vec(shape, vec![g.sum()])
    }
}

pub(crate) fn sum_axis_raw(t: &Tensor, axis: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &t.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = 1;
    Tensor::from_vec(&new_shape, out)
}

pub(crate) fn expand_raw(t: &Tensor, axis: usize, n: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        let src = &t.data()[o * inner..(o + 1) * inner];
        for _ in 0..n {
            out.extend_from_slice(src);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = n;
    Tensor::from_vec(&new_shape, out)
}
