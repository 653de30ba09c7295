//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! A [`Graph`] is rebuilt per minibatch: every operator evaluates eagerly
//! when recorded, so the tape doubles as the forward cache. Nodes are
//! appended in topological order by construction, and [`Graph::backward`]
//! walks them once in reverse.
//!
//! Domain violations (log of a non-positive value, division by zero) and
//! non-finite outputs poison the graph: the first fault is kept and any
//! later `value`/`backward` call surfaces it, so NaN/Inf can never leak
//! into an optimizer step.

use std::collections::BTreeMap;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};
use statrs::function::gamma::{digamma, ln_gamma};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Tanh(Var),
    Lgamma(Var),
    /// k * x + c, elementwise.
    Affine(Var, f64, f64),
    /// Hard clamp to [lo, hi]; gradient passes only strictly inside.
    Clamp(Var, f64, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    SumAll(Var),
    RowSum(Var),
    ColMean(Var),
    MeanAll(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Transpose(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run tape with eager forward evaluation.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    fault: Option<String>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn broadcast_ok(a: [usize; 2], b: [usize; 2]) -> bool {
    a == b || (a[1] == b[1] && (a[0] == 1 || b[0] == 1))
}

/// Elementwise combine with row-vector broadcast on either side.
fn bcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip(b, f);
    }
    let (rows, cols) = (a.rows().max(b.rows()), a.cols());
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let ra = if a.rows() == 1 { 0 } else { r };
        let rb = if b.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            out.set(r, c, f(a.get(ra, c), b.get(rb, c)));
        }
    }
    out
}

/// Reduce a gradient back to the shape of a (possibly broadcast) operand.
fn reduce_to(grad: &Tensor, shape: [usize; 2]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    debug_assert_eq!(shape[0], 1);
    let mut out = Tensor::zeros(1, shape[1]);
    for r in 0..grad.rows() {
        for c in 0..grad.cols() {
            out.data_mut()[c] += grad.get(r, c);
        }
    }
    out
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            fault: None,
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.all_finite() {
            self.fault = Some(format!("non-finite output at node {}", self.nodes.len()));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn poison(&mut self, msg: String) {
        if self.fault.is_none() {
            self.fault = Some(msg);
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First recorded fault, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    /// Forward value of a node. Errors if the graph is poisoned.
    pub fn value(&self, v: Var) -> Result<&Tensor> {
        match &self.fault {
            Some(msg) => Err(Error::NonFinite(msg.clone())),
            None => Ok(&self.nodes[v.0].value),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Register a trainable parameter under a unique name.
    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name}"
        );
        let v = self.push(Op::Param, t, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, value: Tensor) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, needs)
    }

    fn unary(&mut self, op: Op, a: Var, value: Tensor) -> Var {
        let needs = self.needs(a);
        self.push(op, value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert!(
            broadcast_ok(va.shape(), vb.shape()),
            "add shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let value = bcast_zip(va, vb, |x, y| x + y);
        self.binary(Op::Add(a, b), a, b, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert!(
            broadcast_ok(va.shape(), vb.shape()),
            "sub shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let value = bcast_zip(va, vb, |x, y| x - y);
        self.binary(Op::Sub(a, b), a, b, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert!(
            broadcast_ok(va.shape(), vb.shape()),
            "mul shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let value = bcast_zip(va, vb, |x, y| x * y);
        self.binary(Op::Mul(a, b), a, b, value)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert!(
            broadcast_ok(va.shape(), vb.shape()),
            "div shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let zero_divisor = vb.data().iter().any(|&x| x == 0.0);
        let value = bcast_zip(va, vb, |x, y| x / y);
        if zero_divisor {
            self.poison("division by zero".to_string());
        }
        self.binary(Op::Div(a, b), a, b, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).matmul(self.val(b));
        self.binary(Op::MatMul(a, b), a, b, value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.val(a).scale(-1.0);
        self.unary(Op::Neg(a), a, value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::exp);
        self.unary(Op::Exp(a), a, value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        if self.val(a).data().iter().any(|&x| x <= 0.0) {
            self.poison("log of non-positive value".to_string());
        }
        let value = self.val(a).map(f64::ln);
        self.unary(Op::Log(a), a, value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        if self.val(a).data().iter().any(|&x| x < 0.0) {
            self.poison("sqrt of negative value".to_string());
        }
        let value = self.val(a).map(f64::sqrt);
        self.unary(Op::Sqrt(a), a, value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x * x);
        self.unary(Op::Square(a), a, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::tanh);
        self.unary(Op::Tanh(a), a, value)
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        if self.val(a).data().iter().any(|&x| x <= 0.0) {
            self.poison("lgamma of non-positive value".to_string());
        }
        let value = self.val(a).map(ln_gamma);
        self.unary(Op::Lgamma(a), a, value)
    }

    /// `k * x + c` elementwise.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let value = self.val(a).map(|x| k * x + c);
        self.unary(Op::Affine(a, k, c), a, value)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.val(a).map(|x| x.clamp(lo, hi));
        self.unary(Op::Clamp(a, lo, hi), a, value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.val(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(Op::LeakyRelu(a, slope), a, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x.max(0.0));
        self.unary(Op::Relu(a), a, value)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.val(a).map(stable_softplus);
        self.unary(Op::Softplus(a), a, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).map(stable_sigmoid);
        self.unary(Op::Sigmoid(a), a, value)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for c in 0..x.cols() {
                let e = (row[c] - m).exp();
                out.set(r, c, e);
                denom += e;
            }
            for c in 0..x.cols() {
                out.set(r, c, out.get(r, c) / denom);
            }
        }
        self.unary(Op::RowSoftmax(a), a, out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.val(a).sum());
        self.unary(Op::SumAll(a), a, value)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let value = Tensor::new(x.rows(), 1, (0..x.rows()).map(|r| x.row(r).iter().sum()).collect());
        self.unary(Op::RowSum(a), a, value)
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let n = x.rows() as f64;
        let mut out = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                out.data_mut()[c] += x.get(r, c);
            }
        }
        for c in 0..x.cols() {
            out.data_mut()[c] /= n;
        }
        self.unary(Op::ColMean(a), a, out)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.val(a).mean());
        self.unary(Op::MeanAll(a), a, value)
    }

    /// Concatenate along the last axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = Tensor::hcat(&[self.val(a), self.val(b)]);
        self.binary(Op::ConcatCols(a, b), a, b, value)
    }

    /// Columns `start..end` along the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.val(a);
        assert!(start < end && end <= x.cols(), "slice out of range");
        let idx: Vec<usize> = (start..end).collect();
        let value = x.select_cols(&idx);
        self.unary(Op::SliceCols(a, start, end), a, value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a).transpose();
        self.unary(Op::Transpose(a), a, value)
    }

    /// Signature of all rectifier input signs; used by the finite-difference
    /// checker to detect evaluations that straddle a kink.
    pub fn rectifier_signs(&self) -> Vec<i8> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            let input = match node.op {
                Op::LeakyRelu(a, _) | Op::Relu(a) => a,
                _ => continue,
            };
            for &x in self.nodes[input.0].value.data() {
                signs.push(if x > 0.0 { 1 } else { -1 });
            }
        }
        signs
    }

    /// Reverse pass from a scalar loss node, visiting each node once.
    /// Multiple losses on one graph are independent backward calls.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if let Some(msg) = &self.fault {
            return Err(Error::NonFinite(msg.clone()));
        }
        let lv = self.val(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Shape(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        for g in grads.iter().flatten() {
            g.ensure_finite("gradient")?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_grad = |grads: &mut [Option<Tensor>], v: Var, contrib: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => *existing = existing.add(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match self.nodes[id].op {
            Op::Const | Op::Param => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    add_grad(grads, a, reduce_to(g, self.val(a).shape()));
                }
                if self.needs(b) {
                    add_grad(grads, b, reduce_to(g, self.val(b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    add_grad(grads, a, reduce_to(g, self.val(a).shape()));
                }
                if self.needs(b) {
                    add_grad(grads, b, reduce_to(&g.scale(-1.0), self.val(b).shape()));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let c = bcast_zip(g, self.val(b), |gi, bi| gi * bi);
                    add_grad(grads, a, reduce_to(&c, self.val(a).shape()));
                }
                if self.needs(b) {
                    let c = bcast_zip(g, self.val(a), |gi, ai| gi * ai);
                    add_grad(grads, b, reduce_to(&c, self.val(b).shape()));
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let c = bcast_zip(g, self.val(b), |gi, bi| gi / bi);
                    add_grad(grads, a, reduce_to(&c, self.val(a).shape()));
                }
                if self.needs(b) {
                    let y = &self.nodes[id].value;
                    // d/db (a/b) = -y/b
                    let t = bcast_zip(y, self.val(b), |yi, bi| -yi / bi);
                    let c = g.zip(&t, |gi, ti| gi * ti);
                    add_grad(grads, b, reduce_to(&c, self.val(b).shape()));
                }
            }
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    add_grad(grads, a, g.matmul(&self.val(b).transpose()));
                }
                if self.needs(b) {
                    add_grad(grads, b, self.val(a).transpose().matmul(g));
                }
            }
            Op::Neg(a) => add_grad(grads, a, g.scale(-1.0)),
            Op::Exp(a) => add_grad(grads, a, g.zip(&self.nodes[id].value, |gi, yi| gi * yi)),
            Op::Log(a) => add_grad(grads, a, g.zip(self.val(a), |gi, xi| gi / xi)),
            Op::Sqrt(a) => add_grad(
                grads,
                a,
                g.zip(&self.nodes[id].value, |gi, yi| gi * 0.5 / yi),
            ),
            Op::Square(a) => add_grad(grads, a, g.zip(self.val(a), |gi, xi| gi * 2.0 * xi)),
            Op::Tanh(a) => add_grad(
                grads,
                a,
                g.zip(&self.nodes[id].value, |gi, yi| gi * (1.0 - yi * yi)),
            ),
            Op::Lgamma(a) => add_grad(grads, a, g.zip(self.val(a), |gi, xi| gi * digamma(xi))),
            Op::Affine(a, k, _) => add_grad(grads, a, g.scale(k)),
            Op::Clamp(a, lo, hi) => add_grad(
                grads,
                a,
                g.zip(self.val(a), |gi, xi| if xi > lo && xi < hi { gi } else { 0.0 }),
            ),
            // Subgradient at the kink is the negative-slope branch.
            Op::LeakyRelu(a, slope) => add_grad(
                grads,
                a,
                g.zip(self.val(a), |gi, xi| if xi > 0.0 { gi } else { gi * slope }),
            ),
            Op::Relu(a) => add_grad(
                grads,
                a,
                g.zip(self.val(a), |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
            ),
            Op::Softplus(a) => add_grad(
                grads,
                a,
                g.zip(self.val(a), |gi, xi| gi * stable_sigmoid(xi)),
            ),
            Op::Sigmoid(a) => add_grad(
                grads,
                a,
                g.zip(&self.nodes[id].value, |gi, yi| gi * yi * (1.0 - yi)),
            ),
            Op::RowSoftmax(a) => {
                let y = &self.nodes[id].value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = (0..y.cols()).map(|c| g.get(r, c) * y.get(r, c)).sum();
                    for c in 0..y.cols() {
                        out.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                add_grad(grads, a, out);
            }
            Op::SumAll(a) => {
                let x = self.val(a);
                add_grad(grads, a, Tensor::full(x.rows(), x.cols(), g.get(0, 0)));
            }
            Op::RowSum(a) => {
                let x = self.val(a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        out.set(r, c, g.get(r, 0));
                    }
                }
                add_grad(grads, a, out);
            }
            Op::ColMean(a) => {
                let x = self.val(a);
                let n = x.rows() as f64;
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        out.set(r, c, g.get(0, c) / n);
                    }
                }
                add_grad(grads, a, out);
            }
            Op::MeanAll(a) => {
                let x = self.val(a);
                let s = g.get(0, 0) / x.len() as f64;
                add_grad(grads, a, Tensor::full(x.rows(), x.cols(), s));
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.val(a).cols(), self.val(b).cols());
                if self.needs(a) {
                    let idx: Vec<usize> = (0..ca).collect();
                    add_grad(grads, a, g.select_cols(&idx));
                }
                if self.needs(b) {
                    let idx: Vec<usize> = (ca..ca + cb).collect();
                    add_grad(grads, b, g.select_cols(&idx));
                }
            }
            Op::SliceCols(a, start, _) => {
                let x = self.val(a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.set(r, start + c, g.get(r, c));
                    }
                }
                add_grad(grads, a, out);
            }
            Op::Transpose(a) => add_grad(grads, a, g.transpose()),
        }
    }
}

/// One parameter block's result in a finite-difference report.
#[derive(Debug, Clone)]
pub struct FdBlock {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a rectifier kink sat between the two
    /// perturbed evaluations ("non-differentiable point, excluded").
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub blocks: Vec<FdBlock>,
    pub tolerance: f64,
    pub pass: bool,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().fold(0.0_f64, |m, b| m.max(b.max_rel_err))
    }
}

/// Compare analytic gradients with central finite differences.
///
/// `build` must reconstruct the same loss graph from any parameter map;
/// `coords_per_block` coordinates are sampled per parameter block.
pub fn check_gradient_fd(
    build: &dyn Fn(&mut Graph, &BTreeMap<String, Tensor>) -> Var,
    params: &BTreeMap<String, Tensor>,
    step: f64,
    tolerance: f64,
    coords_per_block: usize,
    rng: &mut Rng,
) -> Result<FdReport> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Config(format!("fd step {step} outside (0, 1e-2]")));
    }
    let mut graph = Graph::new();
    let loss = build(&mut graph, params);
    let grads = graph.backward(loss)?;
    let param_vars = graph.param_vars().clone();

    let eval = |p: &BTreeMap<String, Tensor>| -> Result<(f64, Vec<i8>)> {
        let mut g = Graph::new();
        let l = build(&mut g, p);
        let v = g.value(l)?.get(0, 0);
        Ok((v, g.rectifier_signs()))
    };

    let mut blocks = Vec::new();
    for (name, base) in params {
        let var = match param_vars.get(name) {
            Some(v) => *v,
            None => continue,
        };
        // A parameter absent from the differentiated subgraph has an
        // explicit zero gradient.
        let zero = Tensor::zeros(base.rows(), base.cols());
        let analytic = grads.wrt(var).unwrap_or(&zero);
        let n = base.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > coords_per_block {
            for i in 0..coords_per_block {
                let j = i + (rng.uniform(0.0, (n - i) as f64) as usize).min(n - i - 1);
                coords.swap(i, j);
            }
            coords.truncate(coords_per_block);
        }
        let mut max_rel = 0.0_f64;
        let mut excluded = 0;
        let mut checked = 0;
        for &c in &coords {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[c] += step;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[c] -= step;
            let (fp, sp) = eval(&plus)?;
            let (fm, sm) = eval(&minus)?;
            if sp != sm {
                excluded += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * step);
            let an = analytic.data()[c];
            let denom = fd.abs().max(an.abs());
            let rel = if denom < 1e-6 {
                0.0
            } else {
                (fd - an).abs() / denom
            };
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        blocks.push(FdBlock {
            name: name.clone(),
            max_rel_err: max_rel,
            checked,
            excluded,
        });
    }
    let pass = blocks.iter().all(|b| b.max_rel_err <= tolerance);
    Ok(FdReport {
        blocks,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn softplus_and_softmax_closed_forms() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.softplus(x);
        assert!((g.value(y).unwrap().get(0, 0) - 2.0_f64.ln()).abs() < 1e-15);

        let z = g.constant(Tensor::new(1, 3, vec![0.0, 0.0, 0.0]));
        let s = g.row_softmax(z);
        for &v in g.value(s).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::seeded(7);
        let mut g = Graph::new();
        let x = g.constant(rng.normal_tensor(8, 13));
        let s = g.row_softmax(x);
        let v = g.value(s).unwrap();
        for r in 0..v.rows() {
            let sum: f64 = v.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(v.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn simple_derivatives() {
        // d/dx (x*x) at 3 = 6
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert!((grads.wrt(x).unwrap().get(0, 0) - 6.0).abs() < 1e-14);

        // d/dx softplus(x) at 0 = sigmoid(0) = 0.5
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(0.0));
        let y = g.softplus(x);
        let grads = g.backward(y).unwrap();
        assert!((grads.wrt(x).unwrap().get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_must_be_scalar() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::new(1, 2, vec![1.0, 2.0]));
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn log_domain_poisons_graph() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(1, 2, vec![1.0, 0.0]));
        let y = g.log(x);
        assert!(g.value(y).is_err());
    }

    #[test]
    fn evaluate_is_pure() {
        let run = || {
            let mut rng = Rng::seeded(123);
            let mut g = Graph::new();
            let x = g.constant(rng.normal_tensor(5, 4));
            let w = g.constant(rng.normal_tensor(4, 3));
            let h = g.matmul(x, w);
            let a = g.leaky_relu(h, 0.2);
            let s = g.row_softmax(a);
            let m = g.mean_all(s);
            g.value(m).unwrap().get(0, 0).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = Rng::seeded(42);
        let xv = rng.normal_tensor(3, 3);
        let build = |which: u8| {
            let mut g = Graph::new();
            let x = g.param("x", xv.clone());
            let f = {
                let sq = g.square(x);
                g.sum_all(sq)
            };
            let h = {
                let e = g.exp(x);
                g.mean_all(e)
            };
            let loss = match which {
                0 => f,
                1 => h,
                _ => g.add(f, h),
            };
            let grads = g.backward(loss).unwrap();
            grads.wrt(x).unwrap().clone()
        };
        let gf = build(0);
        let gh = build(1);
        let gsum = build(2);
        let diff = gsum.sub(&gf.add(&gh));
        assert!(diff.max_abs() == 0.0, "linearity must hold exactly");
    }

    #[test]
    fn disconnected_parameter_reports_none() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(1.0));
        let unused = g.param("unused", Tensor::scalar(5.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(unused).is_none());
        assert!(grads.wrt(x).is_some());
    }

    fn mlp_loss(g: &mut Graph, params: &BTreeMap<String, Tensor>, x: &Tensor) -> Var {
        let xv = g.constant(x.clone());
        let mut h = xv;
        for layer in 0.. {
            let wname = format!("w{layer}");
            if !params.contains_key(&wname) {
                break;
            }
            let w = g.param(&wname, params[&wname].clone());
            let b = g.param(&format!("b{layer}"), params[&format!("b{layer}")].clone());
            let lin = g.matmul(h, w);
            let pre = g.add(lin, b);
            h = g.leaky_relu(pre, 0.2);
        }
        let sq = g.square(h);
        g.mean_all(sq)
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = Rng::seeded(2024);
        let widths = [6usize, 10, 8, 7, 4];
        let mut params = BTreeMap::new();
        for l in 0..4 {
            params.insert(
                format!("w{l}"),
                rng.normal_tensor(widths[l], widths[l + 1]).scale(0.5),
            );
            params.insert(format!("b{l}"), rng.normal_tensor(1, widths[l + 1]).scale(0.1));
        }
        let x = rng.normal_tensor(9, widths[0]);
        let build = move |g: &mut Graph, p: &BTreeMap<String, Tensor>| mlp_loss(g, p, &x);
        let report =
            check_gradient_fd(&build, &params, 1e-5, 1e-4, 20, &mut Rng::seeded(5)).unwrap();
        assert!(
            report.pass,
            "max relative error {:.3e}",
            report.max_rel_err()
        );
    }

    #[test]
    fn fd_check_quadratic_tight_tolerance() {
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), Tensor::new(1, 3, vec![0.7, -1.2, 2.0]));
        let build = |g: &mut Graph, p: &BTreeMap<String, Tensor>| {
            let x = g.param("x", p["x"].clone());
            let sq = g.square(x);
            g.sum_all(sq)
        };
        let report =
            check_gradient_fd(&build, &params, 1e-5, 1e-6, 10, &mut Rng::seeded(1)).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn fd_check_flags_exact_kink() {
        // One coordinate sits exactly at the rectifier kink: the two
        // perturbed evaluations land on different linear pieces.
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), Tensor::new(1, 2, vec![0.0, 1.0]));
        let build = |g: &mut Graph, p: &BTreeMap<String, Tensor>| {
            let x = g.param("x", p["x"].clone());
            let r = g.leaky_relu(x, 0.2);
            g.sum_all(r)
        };
        let report =
            check_gradient_fd(&build, &params, 1e-5, 1e-6, 10, &mut Rng::seeded(1)).unwrap();
        assert_eq!(report.blocks[0].excluded, 1);
        assert_eq!(report.blocks[0].checked, 1);
        assert!(report.pass);
    }

    #[test]
    fn broadcast_bias_gradient_reduces() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(3, 2, vec![1.0; 6]));
        let b = g.param("b", Tensor::new(1, 2, vec![0.5, -0.5]));
        let y = g.add(x, b);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        let gb = grads.wrt(b).unwrap();
        assert_eq!(gb.shape(), [1, 2]);
        assert_eq!(gb.data(), &[3.0, 3.0]);
    }
}
