//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are appended to a [`Tape`] as they execute. [`Tape::backward`]
//! walks the recorded nodes in exact reverse order, so the gradients it
//! returns are the derivatives of the computation that actually ran: any
//! discrete decision taken while recording (anchor selection, masking) is a
//! constant of that graph.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Recorded primitive. Indices refer to earlier nodes on the same tape.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Abs(usize),
    Silu(usize),
    Gelu(usize),
    Tanh(usize),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    Softmax {
        input: usize,
        temperature: f64,
    },
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    GatherRows {
        input: usize,
        index: Vec<usize>,
    },
    ScatterAddRows {
        input: usize,
        index: Vec<usize>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows {
        input: usize,
        start: usize,
    },
    SliceCols {
        input: usize,
        start: usize,
    },
    Reshape(usize),
    Pool {
        weights: usize,
        features: usize,
        mass: Vec<f64>,
    },
    MaskedNll {
        logits: usize,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
    },
    Rbf {
        input: usize,
        centers: Vec<f64>,
        gamma: f64,
        cutoff: f64,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// A tape is single-threaded; independent computations use independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let shape = self.shape();
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &shape)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(value, op, requires_grad)
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar root.
    ///
    /// Every node that depends on a differentiable leaf and lies upstream of
    /// the root receives a gradient; everything else stays `None`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::InvalidArgument(
                "backward root belongs to a different tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(Tensor::filled(1, 1, 1.0));
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let mut sink = Sink {
                nodes: &nodes,
                grads: lower,
            };
            backprop(&node.op, &node.value, g, &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when nothing flowed into it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a scalar variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

struct Sink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Tensor>],
}

impl<'a> Sink<'a> {
    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn value(&self, id: usize) -> &'a Tensor {
        let nodes: &'a [Node] = self.nodes;
        &nodes[id].value
    }

    /// Runs `f` on the (lazily zeroed) gradient buffer of `id`.
    fn with(&mut self, id: usize, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let [r, c] = self.nodes[id].value.shape();
        let buf = self.grads[id].get_or_insert_with(|| Tensor::zeros(r, c));
        f(buf);
    }

    fn add(&mut self, id: usize, g: &Tensor) {
        self.with(id, |buf| buf.add_assign(g));
    }

    fn add_scaled(&mut self, id: usize, g: &Tensor, s: f64) {
        self.with(id, |buf| {
            for (b, v) in buf.data_mut().iter_mut().zip(g.data()) {
                *b += s * v;
            }
        });
    }

    /// `buf[i] += g[i] * f(i)` elementwise.
    fn add_elementwise(&mut self, id: usize, g: &Tensor, f: impl Fn(usize) -> f64) {
        self.with(id, |buf| {
            for (i, (b, v)) in buf.data_mut().iter_mut().zip(g.data()).enumerate() {
                *b += v * f(i);
            }
        });
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Radial basis activation and its derivative at distance `d`.
pub(crate) fn rbf_basis(d: f64, center: f64, gamma: f64, cutoff: f64) -> (f64, f64) {
    if d >= cutoff {
        return (0.0, 0.0);
    }
    let arg = std::f64::consts::PI * d / cutoff;
    let env = 0.5 * (arg.cos() + 1.0);
    let d_env = -0.5 * std::f64::consts::PI / cutoff * arg.sin();
    let diff = d - center;
    let gauss = (-gamma * diff * diff).exp();
    let d_gauss = -2.0 * gamma * diff * gauss;
    (gauss * env, d_gauss * env + gauss * d_env)
}

fn backprop(op: &Op, out: &Tensor, g: &Tensor, sink: &mut Sink<'_>) {
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            sink.add(a, g);
            sink.add(b, g);
        }
        Op::Sub(a, b) => {
            sink.add(a, g);
            sink.add_scaled(b, g, -1.0);
        }
        Op::Mul(a, b) => {
            if sink.wants(a) {
                let bv = sink.value(b);
                sink.add_elementwise(a, g, |i| bv.data()[i]);
            }
            if sink.wants(b) {
                let av = sink.value(a);
                sink.add_elementwise(b, g, |i| av.data()[i]);
            }
        }
        Op::AddRow(a, r) => {
            sink.add(a, g);
            if sink.wants(r) {
                let sums = column_sums(g);
                sink.with(r, |buf| {
                    for (b, s) in buf.data_mut().iter_mut().zip(&sums) {
                        *b += s;
                    }
                });
            }
        }
        Op::MulRow(a, r) => {
            let cols = g.cols();
            if sink.wants(a) {
                let rv = sink.value(r);
                sink.add_elementwise(a, g, |i| rv.data()[i % cols]);
            }
            if sink.wants(r) {
                let av = sink.value(a);
                let mut sums = vec![0.0; cols];
                for (i, (gv, x)) in g.data().iter().zip(av.data()).enumerate() {
                    sums[i % cols] += gv * x;
                }
                sink.with(r, |buf| {
                    for (b, s) in buf.data_mut().iter_mut().zip(&sums) {
                        *b += s;
                    }
                });
            }
        }
        Op::MulCol(a, c) => {
            let cols = g.cols();
            if sink.wants(a) {
                let cv = sink.value(c);
                sink.add_elementwise(a, g, |i| cv.data()[i / cols]);
            }
            if sink.wants(c) {
                let av = sink.value(a);
                let mut sums = vec![0.0; g.rows()];
                for (i, (gv, x)) in g.data().iter().zip(av.data()).enumerate() {
                    sums[i / cols] += gv * x;
                }
                sink.with(c, |buf| {
                    for (b, s) in buf.data_mut().iter_mut().zip(&sums) {
                        *b += s;
                    }
                });
            }
        }
        Op::Scale(a, s) => sink.add_scaled(a, g, s),
        Op::AddScalar(a) => sink.add(a, g),
        Op::MatMul(a, b) => {
            if sink.wants(a) {
                let bt = sink.value(b).transpose();
                let ga = g.matmul(&bt).expect("matmul backward shapes");
                sink.add(a, &ga);
            }
            if sink.wants(b) {
                let at = sink.value(a).transpose();
                let gb = at.matmul(g).expect("matmul backward shapes");
                sink.add(b, &gb);
            }
        }
        Op::Transpose(a) => sink.add(a, &g.transpose()),
        Op::Exp(a) => sink.add_elementwise(a, g, |i| out.data()[i]),
        Op::Log(a) => {
            let av = sink.value(a);
            sink.add_elementwise(a, g, |i| 1.0 / av.data()[i]);
        }
        Op::Sqrt(a) => sink.add_elementwise(a, g, |i| 0.5 / out.data()[i]),
        Op::Square(a) => {
            let av = sink.value(a);
            sink.add_elementwise(a, g, |i| 2.0 * av.data()[i]);
        }
        Op::Abs(a) => {
            let av = sink.value(a);
            sink.add_elementwise(a, g, |i| {
                let x = av.data()[i];
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
        }
        Op::Silu(a) => {
            let av = sink.value(a);
            sink.add_elementwise(a, g, |i| {
                let x = av.data()[i];
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            });
        }
        Op::Gelu(a) => {
            let av = sink.value(a);
            sink.add_elementwise(a, g, |i| gelu_grad(av.data()[i]));
        }
        Op::Tanh(a) => sink.add_elementwise(a, g, |i| {
            let y = out.data()[i];
            1.0 - y * y
        }),
        Op::SumAll(a) => {
            let s = g.item();
            sink.with(a, |buf| buf.data_mut().iter_mut().for_each(|b| *b += s));
        }
        Op::SumRows(a) => {
            let cols = g.cols();
            sink.with(a, |buf| {
                for (i, b) in buf.data_mut().iter_mut().enumerate() {
                    *b += g.data()[i % cols];
                }
            });
        }
        Op::SumCols(a) => sink.with(a, |buf| {
            let cols = buf.cols();
            for (i, b) in buf.data_mut().iter_mut().enumerate() {
                *b += g.data()[i / cols];
            }
        }),
        Op::Softmax { input, temperature } => {
            // dW_a/dS_a' = W_a (delta_aa' - W_a'), scaled by 1/temperature.
            sink.with(input, |buf| {
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((b, &yv), &gv) in buf.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *b += yv * (gv - dot) / temperature;
                    }
                }
            });
        }
        Op::LayerNorm {
            input,
            gain,
            bias,
            ref normalized,
            ref inv_std,
        } => {
            let cols = g.cols();
            if sink.wants(input) {
                let gain_v = sink.value(gain);
                sink.with(input, |buf| {
                    for r in 0..g.rows() {
                        let xhat = normalized.row(r);
                        let gr = g.row(r);
                        let dxhat: Vec<f64> =
                            gr.iter().zip(gain_v.data()).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>()
                            / cols as f64;
                        for ((b, d), xh) in buf.row_mut(r).iter_mut().zip(&dxhat).zip(xhat) {
                            *b += inv_std[r] * (d - mean_d - xh * mean_dx);
                        }
                    }
                });
            }
            if sink.wants(gain) {
                let mut sums = vec![0.0; cols];
                for (i, (gv, xh)) in g.data().iter().zip(normalized.data()).enumerate() {
                    sums[i % cols] += gv * xh;
                }
                sink.with(gain, |buf| {
                    for (b, s) in buf.data_mut().iter_mut().zip(&sums) {
                        *b += s;
                    }
                });
            }
            if sink.wants(bias) {
                let sums = column_sums(g);
                sink.with(bias, |buf| {
                    for (b, s) in buf.data_mut().iter_mut().zip(&sums) {
                        *b += s;
                    }
                });
            }
        }
        Op::GatherRows { input, ref index } => sink.with(input, |buf| {
            for (r, &src) in index.iter().enumerate() {
                for (b, v) in buf.row_mut(src).iter_mut().zip(g.row(r)) {
                    *b += v;
                }
            }
        }),
        Op::ScatterAddRows { input, ref index } => sink.with(input, |buf| {
            for (r, &dst) in index.iter().enumerate() {
                for (b, v) in buf.row_mut(r).iter_mut().zip(g.row(dst)) {
                    *b += v;
                }
            }
        }),
        Op::ConcatCols(ref parts) => {
            let mut offset = 0;
            for &p in parts {
                let width = sink.value(p).cols();
                sink.with(p, |buf| {
                    for r in 0..g.rows() {
                        for (b, v) in buf
                            .row_mut(r)
                            .iter_mut()
                            .zip(&g.row(r)[offset..offset + width])
                        {
                            *b += v;
                        }
                    }
                });
                offset += width;
            }
        }
        Op::ConcatRows(ref parts) => {
            let mut offset = 0;
            for &p in parts {
                let height = sink.value(p).rows();
                sink.with(p, |buf| {
                    for r in 0..height {
                        for (b, v) in buf.row_mut(r).iter_mut().zip(g.row(offset + r)) {
                            *b += v;
                        }
                    }
                });
                offset += height;
            }
        }
        Op::SliceRows { input, start } => sink.with(input, |buf| {
            for r in 0..g.rows() {
                for (b, v) in buf.row_mut(start + r).iter_mut().zip(g.row(r)) {
                    *b += v;
                }
            }
        }),
        Op::SliceCols { input, start } => sink.with(input, |buf| {
            let width = g.cols();
            for r in 0..g.rows() {
                for (b, v) in buf.row_mut(r)[start..start + width].iter_mut().zip(g.row(r)) {
                    *b += v;
                }
            }
        }),
        Op::Reshape(a) => sink.with(a, |buf| {
            for (b, v) in buf.data_mut().iter_mut().zip(g.data()) {
                *b += v;
            }
        }),
        Op::Pool {
            weights,
            features,
            ref mass,
        } => {
            // t_a = sum_i W_ia X_i / m_a, m_a = sum_i W_ia + eps
            // dt_a/dX_i = W_ia / m_a,  dt_a/dW_ia = (X_i - t_a) / m_a
            let w = sink.value(weights);
            let x = sink.value(features);
            let (n, k) = (w.rows(), w.cols());
            if sink.wants(features) {
                sink.with(features, |buf| {
                    for i in 0..n {
                        for a in 0..k {
                            let coef = w.get(i, a) / mass[a];
                            for (b, v) in buf.row_mut(i).iter_mut().zip(g.row(a)) {
                                *b += coef * v;
                            }
                        }
                    }
                });
            }
            if sink.wants(weights) {
                sink.with(weights, |buf| {
                    for i in 0..n {
                        for a in 0..k {
                            let dot: f64 = g
                                .row(a)
                                .iter()
                                .zip(x.row(i))
                                .zip(out.row(a))
                                .map(|((gv, xv), tv)| gv * (xv - tv))
                                .sum();
                            let cur = buf.get(i, a);
                            buf.set(i, a, cur + dot / mass[a]);
                        }
                    }
                });
            }
        }
        Op::MaskedNll {
            logits,
            ref targets,
            ref mask,
            ref probs,
        } => {
            // Rows with mask 0 are never touched: their gradient stays exactly zero.
            let s = g.item();
            sink.with(logits, |buf| {
                for (t, (&m, &y)) in mask.iter().zip(targets).enumerate() {
                    if !m {
                        continue;
                    }
                    for (j, (b, p)) in buf.row_mut(t).iter_mut().zip(probs.row(t)).enumerate() {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        *b += s * (p - onehot);
                    }
                }
            });
        }
        Op::Rbf {
            input,
            ref centers,
            gamma,
            cutoff,
        } => {
            let d = sink.value(input);
            sink.with(input, |buf| {
                for e in 0..d.rows() {
                    let dist = d.get(e, 0);
                    let mut acc = 0.0;
                    for (r, &c) in centers.iter().enumerate() {
                        acc += g.get(e, r) * rbf_basis(dist, c, gamma, cutoff).1;
                    }
                    let cur = buf.get(e, 0);
                    buf.set(e, 0, cur + acc);
                }
            });
        }
    }
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let cols = g.cols();
    let mut sums = vec![0.0; cols];
    for (i, v) in g.data().iter().enumerate() {
        sums[i % cols] += v;
    }
    sums
}
