//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks that list in reverse once and returns a [`Gradients`] table. The
//! tape is single-use: a second `backward` on the same graph is an error, so
//! gradients can never be double-counted by accident.
//!
//! Broadcasting is deliberately narrow. Binary ops accept equal shapes or a
//! one-element operand on either side; adding a bias row to every row of a
//! matrix is its own op ([`Var::add_bias`]).

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_strided, Tensor};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Left operand has one element.
    LeftScalar,
    /// Right operand has one element.
    RightScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Softplus,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        bcast: Bcast,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Unary {
        kind: UnaryKind,
        x: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    AddConst {
        x: usize,
    },
    Powf {
        x: usize,
        p: f64,
    },
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Sum(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    LogSumExp {
        x: usize,
        axis: usize,
    },
    LogSoftmaxRows(usize),
    PairwiseSqDist {
        a: usize,
        b: usize,
    },
    PickPerRow {
        x: usize,
        indices: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use recording of one forward evaluation.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    check_finite: bool,
    consumed: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// Finite-value checks follow `debug_assertions`.
    pub fn new() -> Self {
        Graph::with_finite_checks(cfg!(debug_assertions))
    }

    /// When `check` is set every op verifies its output is free of NaN/Inf.
    pub fn with_finite_checks(check: bool) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            check_finite: check,
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a registered parameter to this graph. Repeated calls with the
    /// same id return the same leaf so every use accumulates into one slot.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let v = self.push_unchecked(store.value(id).clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires))
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(Error::Shape("loss belongs to a different graph".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(&pid, &node)| (pid, node))
            .collect();
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

fn op_name(op: &Op) -> String {
    match op {
        Op::Unary { kind, .. } => format!("{kind:?}").to_lowercase(),
        Op::Binary { kind, .. } => format!("{kind:?}").to_lowercase(),
        other => {
            let s = format!("{other:?}");
            s.split([' ', '(', '{']).next().unwrap_or("op").to_lowercase()
        }
    }
}

/// Gradient table produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it influenced the loss.
    pub fn wrt(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get(var.id)?.as_ref().map(|g| {
            Tensor::new(self.shapes[var.id].clone(), g.clone()).expect("gradient shape")
        })
    }

    /// Adds every bound parameter's gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (acc, v) in store.grad_mut(pid).iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    let want = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if want(*a) {
                // dA = G · Bᵀ
                add_into(&mut grads[*a], m * k, |ga| {
                    gemm_strided(m, n, k, g, (n, 1), bv.data(), (1, n), ga, 1.0)
                });
            }
            if want(*b) {
                // dB = Aᵀ · G
                add_into(&mut grads[*b], k * n, |gb| {
                    gemm_strided(k, m, n, av.data(), (1, k), g, (n, 1), gb, 1.0)
                });
            }
        }
        Op::Binary { kind, a, b, bcast } => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let ai = |i: usize| if *bcast == Bcast::LeftScalar { av[0] } else { av[i] };
            let bi = |i: usize| if *bcast == Bcast::RightScalar { bv[0] } else { bv[i] };
            let local_a = |i: usize| match kind {
                BinaryKind::Add | BinaryKind::Sub => 1.0,
                BinaryKind::Mul => bi(i),
                BinaryKind::Div => 1.0 / bi(i),
            };
            let local_b = |i: usize| match kind {
                BinaryKind::Add => 1.0,
                BinaryKind::Sub => -1.0,
                BinaryKind::Mul => ai(i),
                BinaryKind::Div => -ai(i) / (bi(i) * bi(i)),
            };
            if want(*a) {
                let len = av.len();
                add_into(&mut grads[*a], len, |ga| {
                    if *bcast == Bcast::LeftScalar {
                        ga[0] += g.iter().enumerate().map(|(i, gi)| gi * local_a(i)).sum::<f64>();
                    } else {
                        for (i, gi) in g.iter().enumerate() {
                            ga[i] += gi * local_a(i);
                        }
                    }
                });
            }
            if want(*b) {
                let len = bv.len();
                add_into(&mut grads[*b], len, |gb| {
                    if *bcast == Bcast::RightScalar {
                        gb[0] += g.iter().enumerate().map(|(i, gi)| gi * local_b(i)).sum::<f64>();
                    } else {
                        for (i, gi) in g.iter().enumerate() {
                            gb[i] += gi * local_b(i);
                        }
                    }
                });
            }
        }
        Op::AddBias { x, bias } => {
            let cols = nodes[*bias].value.numel();
            if want(*x) {
                add_into(&mut grads[*x], g.len(), |gx| {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            if want(*bias) {
                add_into(&mut grads[*bias], cols, |gb| {
                    for row in g.chunks(cols) {
                        for (d, s) in gb.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                });
            }
        }
        Op::Unary { kind, x } => {
            if !want(*x) {
                return;
            }
            let xv = nodes[*x].value.data();
            add_into(&mut grads[*x], xv.len(), |gx| {
                for i in 0..xv.len() {
                    let d = match kind {
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Tanh => 1.0 - out[i] * out[i],
                        UnaryKind::Sigmoid => out[i] * (1.0 - out[i]),
                        UnaryKind::Relu => {
                            if xv[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Exp => out[i],
                        UnaryKind::Log => 1.0 / xv[i],
                        UnaryKind::Softplus => sigmoid(xv[i]),
                        UnaryKind::Square => 2.0 * xv[i],
                    };
                    gx[i] += g[i] * d;
                }
            });
        }
        Op::Scale { x, c } => {
            if want(*x) {
                add_into(&mut grads[*x], g.len(), |gx| {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += c * s;
                    }
                });
            }
        }
        Op::AddConst { x } => {
            if want(*x) {
                add_into(&mut grads[*x], g.len(), |gx| {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
        }
        Op::Powf { x, p } => {
            if want(*x) {
                let xv = nodes[*x].value.data();
                add_into(&mut grads[*x], g.len(), |gx| {
                    for i in 0..xv.len() {
                        let d = if *p == 0.0 {
                            0.0
                        } else if *p == 1.0 {
                            1.0
                        } else {
                            p * xv[i].powf(p - 1.0)
                        };
                        gx[i] += g[i] * d;
                    }
                });
            }
        }
        Op::Clamp { x, lo, hi } => {
            if want(*x) {
                let xv = nodes[*x].value.data();
                add_into(&mut grads[*x], g.len(), |gx| {
                    for i in 0..xv.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                });
            }
        }
        Op::Sum(x) => {
            if want(*x) {
                let len = nodes[*x].value.numel();
                add_into(&mut grads[*x], len, |gx| {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
        }
        Op::SumAxis { x, axis } => {
            if want(*x) {
                let xv = &nodes[*x].value;
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                add_into(&mut grads[*x], r * c, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += if *axis == 0 { g[j] } else { g[i] };
                        }
                    }
                });
            }
        }
        Op::LogSumExp { x, axis } => {
            if want(*x) {
                let xv = &nodes[*x].value;
                let (r, c) = lse_dims(xv);
                add_into(&mut grads[*x], xv.numel(), |gx| {
                    for_each_lane(r, c, *axis, xv.rank(), |lane, idx| {
                        gx[idx] += g[lane] * (xv.data()[idx] - out[lane]).exp();
                    });
                });
            }
        }
        Op::LogSoftmaxRows(x) => {
            if want(*x) {
                let c = nodes[*x].value.cols();
                add_into(&mut grads[*x], g.len(), |gx| {
                    for ((grow, orow), dst) in g
                        .chunks(c)
                        .zip(out.chunks(c))
                        .zip(gx.chunks_mut(c))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..c {
                            dst[j] += grow[j] - orow[j].exp() * gsum;
                        }
                    }
                });
            }
        }
        Op::PairwiseSqDist { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (rows_a, rows_b, l) = (av.rows(), bv.rows(), av.cols());
            if want(*a) {
                add_into(&mut grads[*a], rows_a * l, |ga| {
                    for i in 0..rows_a {
                        for s in 0..rows_b {
                            let w = 2.0 * g[i * rows_b + s];
                            for t in 0..l {
                                ga[i * l + t] += w * (av.get(i, t) - bv.get(s, t));
                            }
                        }
                    }
                });
            }
            if want(*b) {
                add_into(&mut grads[*b], rows_b * l, |gb| {
                    for i in 0..rows_a {
                        for s in 0..rows_b {
                            let w = 2.0 * g[i * rows_b + s];
                            for t in 0..l {
                                gb[s * l + t] += w * (bv.get(s, t) - av.get(i, t));
                            }
                        }
                    }
                });
            }
        }
        Op::PickPerRow { x, indices } => {
            if want(*x) {
                let xv = &nodes[*x].value;
                let c = xv.cols();
                add_into(&mut grads[*x], xv.numel(), |gx| {
                    for (i, &j) in indices.iter().enumerate() {
                        gx[i * c + j] += g[i];
                    }
                });
            }
        }
    }
}

fn lse_dims(x: &Tensor) -> (usize, usize) {
    match x.rank() {
        2 => (x.shape()[0], x.shape()[1]),
        _ => (1, x.numel()),
    }
}

/// Visits every element of a rank-1 or rank-2 tensor, reporting which
/// output lane (reduction result) it belongs to.
fn for_each_lane(r: usize, c: usize, axis: usize, rank: usize, mut f: impl FnMut(usize, usize)) {
    for i in 0..r {
        for j in 0..c {
            let lane = if rank < 2 {
                0
            } else if axis == 0 {
                j
            } else {
                i
            };
            f(lane, i * c + j);
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

/// Stable `log Σ exp` of a slice. Panics on an empty slice.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "log_sum_exp of an empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn value(&self) -> Tensor {
        self.graph.with_value(self.id, Tensor::clone)
    }

    pub fn item(&self) -> Result<f64> {
        self.graph.with_value(self.id, Tensor::item)
    }

    fn same_graph(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Shape("operands belong to different graphs".into()))
        }
    }

    fn unary_map(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let v = self.graph.with_value(self.id, |t| t.map(f));
        self.graph.push(v, op, &[self.id])
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs)?;
        let g = self.graph;
        let value = {
            let nodes = g.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::Shape(format!(
                    "matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm_strided(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut c, 0.0);
            Tensor::matrix(m, n, c)?
        };
        g.push(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id])
    }

    fn binary(self, rhs: Var<'g>, kind: BinaryKind) -> Result<Var<'g>> {
        self.same_graph(&rhs)?;
        let g = self.graph;
        let (value, bcast) = {
            let nodes = g.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let bcast = if a.shape() == b.shape() {
                Bcast::Same
            } else if b.numel() == 1 {
                Bcast::RightScalar
            } else if a.numel() == 1 {
                Bcast::LeftScalar
            } else {
                return Err(Error::Shape(format!(
                    "cannot broadcast {:?} with {:?} (only equal shapes or a scalar operand)",
                    a.shape(),
                    b.shape()
                )));
            };
            let shape = if bcast == Bcast::LeftScalar {
                b.shape().to_vec()
            } else {
                a.shape().to_vec()
            };
            let n = shape.iter().product::<usize>();
            let (ad, bd) = (a.data(), b.data());
            let f = |x: f64, y: f64| match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            };
            let data: Vec<f64> = match bcast {
                Bcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
                Bcast::RightScalar => ad.iter().map(|&x| f(x, bd[0])).collect(),
                Bcast::LeftScalar => (0..n).map(|i| f(ad[0], bd[i])).collect(),
            };
            if kind == BinaryKind::Div && bd.contains(&0.0) {
                return Err(Error::Domain("division by zero".into()));
            }
            (Tensor::new(shape, data)?, bcast)
        };
        g.push(
            value,
            Op::Binary {
                kind,
                a: self.id,
                b: rhs.id,
                bcast,
            },
            &[self.id, rhs.id],
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, BinaryKind::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, BinaryKind::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, BinaryKind::Mul)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, BinaryKind::Div)
    }

    /// Adds a length-`n` bias to every row of a `rows×n` matrix.
    pub fn add_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias)?;
        let g = self.graph;
        let value = {
            let nodes = g.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            if x.rank() != 2 || b.rank() != 1 || b.numel() != x.shape()[1] {
                return Err(Error::Shape(format!(
                    "add_bias of {:?} and {:?}",
                    x.shape(),
                    b.shape()
                )));
            }
            let c = x.shape()[1];
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(c) {
                for (d, bv) in row.iter_mut().zip(b.data()) {
                    *d += bv;
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        g.push(
            value,
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
            &[self.id, bias.id],
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Neg,
                x: self.id,
            },
            |x| -x,
        )
    }

    pub fn tanh(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Tanh,
                x: self.id,
            },
            f64::tanh,
        )
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Sigmoid,
                x: self.id,
            },
            sigmoid,
        )
    }

    pub fn relu(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Relu,
                x: self.id,
            },
            |x| x.max(0.0),
        )
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Exp,
                x: self.id,
            },
            f64::exp,
        )
    }

    pub fn log(self) -> Result<Var<'g>> {
        let bad = self
            .graph
            .with_value(self.id, |t| t.data().iter().find(|&&x| x <= 0.0).copied());
        if let Some(x) = bad {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Log,
                x: self.id,
            },
            f64::ln,
        )
    }

    pub fn softplus(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Softplus,
                x: self.id,
            },
            softplus,
        )
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Square,
                x: self.id,
            },
            |x| x * x,
        )
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary_map(Op::Scale { x: self.id, c }, |x| c * x)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        self.unary_map(Op::AddConst { x: self.id }, |x| x + c)
    }

    /// `x^p` for non-negative inputs.
    pub fn powf(self, p: f64) -> Result<Var<'g>> {
        let bad = self
            .graph
            .with_value(self.id, |t| t.data().iter().find(|&&x| x < 0.0).copied());
        if let Some(x) = bad {
            return Err(Error::Domain(format!("powf of negative value {x}")));
        }
        self.unary_map(Op::Powf { x: self.id, p }, |x| x.powf(p))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'g>> {
        self.unary_map(Op::Clamp { x: self.id, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let s = self.graph.with_value(self.id, Tensor::sum);
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.graph.with_value(self.id, Tensor::numel);
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sums a matrix along `axis` (0 collapses rows, 1 collapses columns).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let value = self.graph.with_value(self.id, |t| {
            if t.rank() != 2 || axis > 1 {
                return Err(Error::Shape(format!(
                    "sum_axis({axis}) needs a matrix, got {:?}",
                    t.shape()
                )));
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let mut out = vec![0.0; if axis == 0 { c } else { r }];
            for i in 0..r {
                for j in 0..c {
                    out[if axis == 0 { j } else { i }] += t.get(i, j);
                }
            }
            Ok(Tensor::vector(out))
        })?;
        self.graph
            .push(value, Op::SumAxis { x: self.id, axis }, &[self.id])
    }

    /// `max(x) + log Σ exp(x − max(x))` along `axis`.
    ///
    /// For a vector the only axis is 0 and the result is a scalar. For a
    /// matrix, axis 0 reduces each column and axis 1 reduces each row.
    pub fn log_sum_exp(self, axis: usize) -> Result<Var<'g>> {
        let value = self.graph.with_value(self.id, |t| {
            let ok = match t.rank() {
                0 => axis == 0,
                1 => axis == 0,
                2 => axis <= 1,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "log_sum_exp axis {axis} invalid for shape {:?}",
                    t.shape()
                )));
            }
            if t.numel() == 0 {
                return Err(Error::Shape(format!(
                    "log_sum_exp over an empty axis, shape {:?}",
                    t.shape()
                )));
            }
            if t.rank() < 2 {
                return Ok(Tensor::scalar(log_sum_exp_slice(t.data())));
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let out = if axis == 1 {
                (0..r).map(|i| log_sum_exp_slice(t.row(i))).collect()
            } else {
                let mut col = vec![0.0; r];
                (0..c)
                    .map(|j| {
                        for (i, v) in col.iter_mut().enumerate() {
                            *v = t.get(i, j);
                        }
                        log_sum_exp_slice(&col)
                    })
                    .collect()
            };
            Ok(Tensor::vector(out))
        })?;
        self.graph
            .push(value, Op::LogSumExp { x: self.id, axis }, &[self.id])
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(self) -> Result<Var<'g>> {
        let value = self.graph.with_value(self.id, |t| {
            if t.rank() != 2 || t.cols() == 0 {
                return Err(Error::Shape(format!(
                    "log_softmax_rows needs a non-empty matrix, got {:?}",
                    t.shape()
                )));
            }
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(t.cols()) {
                let lse = log_sum_exp_slice(row);
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            Tensor::new(t.shape().to_vec(), data)
        })?;
        self.graph
            .push(value, Op::LogSoftmaxRows(self.id), &[self.id])
    }

    /// Squared Euclidean distance between every row of `self` (`B×L`) and
    /// every row of `other` (`S×L`), as a `B×S` matrix.
    pub fn pairwise_sq_dist(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other)?;
        let g = self.graph;
        let value = {
            let nodes = g.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
                return Err(Error::Shape(format!(
                    "pairwise_sq_dist of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (ra, rb) = (a.rows(), b.rows());
            let mut out = Vec::with_capacity(ra * rb);
            for i in 0..ra {
                let x = a.row(i);
                for s in 0..rb {
                    out.push(x.iter().zip(b.row(s)).map(|(p, q)| (p - q) * (p - q)).sum());
                }
            }
            Tensor::matrix(ra, rb, out)?
        };
        g.push(
            value,
            Op::PairwiseSqDist {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        )
    }

    /// Picks column `indices[i]` from row `i`, giving a vector.
    pub fn pick_per_row(self, indices: &[usize]) -> Result<Var<'g>> {
        let value = self.graph.with_value(self.id, |t| {
            if t.rank() != 2 || t.rows() != indices.len() {
                return Err(Error::Shape(format!(
                    "pick_per_row with {} indices on {:?}",
                    indices.len(),
                    t.shape()
                )));
            }
            let c = t.cols();
            indices
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    if j >= c {
                        Err(Error::Shape(format!("column {j} out of range for {c} columns")))
                    } else {
                        Ok(t.get(i, j))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(Tensor::vector)
        })?;
        self.graph.push(
            value,
            Op::PickPerRow {
                x: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        )
    }
}

/// Log-density of an isotropic Gaussian `N(z | mean, σ²I)` with
/// `σ = exp(log_sigma)`:
/// `−d/2·log 2π − d·log_sigma − ‖z − mean‖² / (2σ²)`.
pub fn gaussian_log_density<'g>(z: Var<'g>, mean: Var<'g>, log_sigma: Var<'g>) -> Result<Var<'g>> {
    let (zs, ms) = (z.shape(), mean.shape());
    if zs != ms {
        return Err(Error::Shape(format!(
            "gaussian_log_density of z {zs:?} and mean {ms:?}"
        )));
    }
    if log_sigma.value().numel() != 1 {
        return Err(Error::Shape("log_sigma must be a scalar".into()));
    }
    let d = zs.iter().product::<usize>() as f64;
    let sq = z.sub(mean)?.square()?.sum()?;
    let inv_two_var = log_sigma.scale(-2.0)?.exp()?.scale(0.5)?;
    sq.mul(inv_two_var)?
        .neg()?
        .sub(log_sigma.scale(d)?)?
        .add_scalar(-0.5 * d * LN_2PI)
}

/// Batched form of [`gaussian_log_density`]: entry `(i, s)` is
/// `log N(z_i | means_s, σ²I)` for `z` of shape `B×L` and `means` `S×L`.
pub fn gaussian_log_density_pairwise<'g>(
    z: Var<'g>,
    means: Var<'g>,
    log_sigma: Var<'g>,
) -> Result<Var<'g>> {
    let l = z.shape().get(1).copied().unwrap_or(0) as f64;
    let sq = z.pairwise_sq_dist(means)?;
    let inv_two_var = log_sigma.scale(-2.0)?.exp()?.scale(0.5)?;
    let norm = log_sigma.scale(l)?.add_scalar(0.5 * l * LN_2PI)?;
    sq.mul(inv_two_var)?.neg()?.sub(norm)
}
