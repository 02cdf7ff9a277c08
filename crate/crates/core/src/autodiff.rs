//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`]s during a forward
//! pass; [`Tape::backward`] replays it in reverse and returns the gradient of
//! a scalar with respect to every tracked node. Gradients from several uses
//! of the same node are summed. A tape is single-threaded and meant to be
//! rebuilt for every forward pass.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{gcn_normalize, SparseAdjacency, SparseMatrix};
use crate::tensor::{gemm, Tensor};

/// Shift applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// How the fused probabilities combine the observed graph with `P`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `A ◇ P`
    #[default]
    Asymmetric,
    /// `(A ◇ P + P ◇ A) / 2`
    Symmetric,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM(Rc<SparseMatrix>, usize),
    Relu(usize),
    Exp(usize),
    LogEps(usize),
    Add(usize, usize),
    Scale(usize, f64),
    AddRowBias(usize, usize),
    ConcatCols(usize, usize),
    Sum(usize),
    WeightedSum(usize, Rc<Vec<f64>>),
    Dropout(usize, Rc<Vec<f64>>),
    CrossEntropy { logits: usize, probs: Tensor, labels: Rc<Vec<usize>>, mask: Rc<Vec<usize>> },
    EdgeProbabilities { v: usize, log_phi: usize },
    ProbBooleanProduct(Rc<SparseAdjacency>, usize),
    Gather(usize, Rc<Vec<(usize, usize)>>),
    FusedPairProbs {
        v: usize,
        log_phi: usize,
        adj: Rc<SparseAdjacency>,
        pairs: Rc<Vec<(usize, usize)>>,
        mode: FusionMode,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`; `None` if no gradient reached it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Tape {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// A tape that only evaluates; no node requires a gradient and no
    /// backward state is kept. Values are identical to a recording tape.
    pub fn no_grad() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient will be reported by [`Tape::backward`].
    pub fn param(&self, value: impl Into<Rc<Tensor>>) -> Var<'_> {
        self.push(value.into(), Op::Leaf, self.record)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: impl Into<Rc<Tensor>>) -> Var<'_> {
        self.push(value.into(), Op::Leaf, false)
    }

    fn push(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        self.record && ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: Var<'_>, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.tracked(&[a.id]);
        self.push(Rc::new(value), op, rg)
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.tracked(&[a.id, b.id]);
        self.push(Rc::new(value), op, rg)
    }

    /// Gradient of the 1x1 node `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != (1, 1) {
            return Err(Error::Shape(format!("backward from a {:?} node; expected a scalar", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: usize, delta: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(t) => t.add_scaled(1.0, &delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller.
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        gemm(false, &g, true, bv, 0.0, &mut ga);
                        acc(*a, ga);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        gemm(true, av, false, &g, 0.0, &mut gb);
                        acc(*b, gb);
                    }
                }
                Op::SpMM(m, x) => acc(*x, m.spmm_transpose(&g)?),
                Op::Relu(a) => {
                    let mut d = g;
                    for (d, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(*a, d);
                }
                Op::Exp(a) => {
                    let mut d = g;
                    for (d, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y;
                    }
                    acc(*a, d);
                }
                Op::LogEps(a) => {
                    let mut d = g;
                    for (d, &x) in d.data_mut().iter_mut().zip(val(*a).data()) {
                        *d /= x + LOG_EPS;
                    }
                    acc(*a, d);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
                Op::AddRowBias(a, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    acc(*bias, gb);
                    acc(*a, g);
                }
                Op::ConcatCols(a, b) => {
                    let p = val(*a).cols();
                    let q = val(*b).cols();
                    let ga = Tensor::from_fn(g.rows(), p, |i, j| g.get(i, j));
                    let gb = Tensor::from_fn(g.rows(), q, |i, j| g.get(i, p + j));
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Tensor::filled(r, c, g.item()));
                }
                Op::WeightedSum(a, w) => {
                    let (r, c) = val(*a).shape();
                    let s = g.item();
                    acc(*a, Tensor::from_vec(r, c, w.iter().map(|w| w * s).collect())?);
                }
                Op::Dropout(a, mask) => {
                    let mut d = g;
                    for (d, m) in d.data_mut().iter_mut().zip(mask.iter()) {
                        *d *= m;
                    }
                    acc(*a, d);
                }
                Op::CrossEntropy { logits, probs, labels, mask } => {
                    let s = g.item() / mask.len() as f64;
                    let mut d = Tensor::zeros(probs.rows(), probs.cols());
                    for &i in mask.iter() {
                        let row = d.row_mut(i);
                        for (r, p) in row.iter_mut().zip(probs.row(i)) {
                            *r = s * p;
                        }
                        row[labels[i]] -= s;
                    }
                    acc(*logits, d);
                }
                Op::EdgeProbabilities { v, log_phi } => {
                    let vv = val(*v);
                    let phi = val(*log_phi).item().exp();
                    let n = vv.rows();
                    let p = &node.value;
                    let mut gv = Tensor::zeros(n, vv.cols());
                    let mut g_log_phi = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            let s = g.get(i, j) * p.get(i, j);
                            if s == 0.0 {
                                continue;
                            }
                            let (vi, vj) = (vv.row(i), vv.row(j));
                            let d2: f64 = vi.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum();
                            g_log_phi += s * d2 / phi;
                            let c = -2.0 * s / phi;
                            for t in 0..vv.cols() {
                                let diff = vi[t] - vj[t];
                                gv.data_mut()[i * vv.cols() + t] += c * diff;
                                gv.data_mut()[j * vv.cols() + t] -= c * diff;
                            }
                        }
                    }
                    acc(*v, gv);
                    acc(*log_phi, Tensor::scalar(g_log_phi));
                }
                Op::ProbBooleanProduct(adj, p) => {
                    let n = adj.n();
                    let mut gp = Tensor::zeros(n, val(*p).cols());
                    for i in 0..n {
                        let nbrs = adj.neighbors(i);
                        if nbrs.is_empty() {
                            for (d, s) in gp.row_mut(i).iter_mut().zip(g.row(i)) {
                                *d += s;
                            }
                            continue;
                        }
                        let w = 1.0 / nbrs.len() as f64;
                        for &k in nbrs {
                            for (d, s) in gp.row_mut(k).iter_mut().zip(g.row(i)) {
                                *d += w * s;
                            }
                        }
                    }
                    acc(*p, gp);
                }
                Op::Gather(p, pairs) => {
                    let (r, c) = val(*p).shape();
                    let mut gp = Tensor::zeros(r, c);
                    for (m, &(i, j)) in pairs.iter().enumerate() {
                        gp.data_mut()[i * c + j] += g.data()[m];
                    }
                    acc(*p, gp);
                }
                Op::FusedPairProbs { v, log_phi, adj, pairs, mode } => {
                    let vv = val(*v);
                    let phi = val(*log_phi).item().exp();
                    let d = vv.cols();
                    let mut gv = Tensor::zeros(vv.rows(), d);
                    let mut g_log_phi = 0.0;
                    let mut push = |k: usize, j: usize, w: f64| {
                        if w == 0.0 {
                            return;
                        }
                        let (vk, vj) = (vv.row(k), vv.row(j));
                        let d2: f64 = vk.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum();
                        let s = w * (-d2 / phi).exp();
                        g_log_phi += s * d2 / phi;
                        let c = -2.0 * s / phi;
                        for t in 0..d {
                            let diff = vk[t] - vj[t];
                            gv.data_mut()[k * d + t] += c * diff;
                            gv.data_mut()[j * d + t] -= c * diff;
                        }
                    };
                    for (m, &(i, j)) in pairs.iter().enumerate() {
                        let gm = g.data()[m];
                        let half = match mode {
                            FusionMode::Asymmetric => 1.0,
                            FusionMode::Symmetric => 0.5,
                        };
                        for_each_mean_term(adj, i, |k, w| push(k, j, half * gm * w));
                        if *mode == FusionMode::Symmetric {
                            for_each_mean_term(adj, j, |k, w| push(i, k, half * gm * w));
                        }
                    }
                    acc(*v, gv);
                    acc(*log_phi, Tensor::scalar(g_log_phi));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Calls `f(k, weight)` for the terms of row `i` of the row-mean operator.
fn for_each_mean_term(adj: &SparseAdjacency, i: usize, mut f: impl FnMut(usize, f64)) {
    let nbrs = adj.neighbors(i);
    if nbrs.is_empty() {
        f(i, 1.0);
    } else {
        let w = 1.0 / nbrs.len() as f64;
        nbrs.iter().for_each(|&k| f(k, w));
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-‖v_k − v_j‖² / φ)` averaged as in the fused product at `(i, j)`.
pub(crate) fn fused_prob_at(
    v: &Tensor,
    phi: f64,
    adj: &SparseAdjacency,
    mode: FusionMode,
    i: usize,
    j: usize,
) -> f64 {
    let kernel = |a: usize, b: usize| (-sq_dist(v.row(a), v.row(b)) / phi).exp();
    let mut left = 0.0;
    for_each_mean_term(adj, i, |k, w| left += w * kernel(k, j));
    match mode {
        FusionMode::Asymmetric => left,
        FusionMode::Symmetric => {
            let mut right = 0.0;
            for_each_mean_term(adj, j, |k, w| right += w * kernel(i, k));
            0.5 * (left + right)
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let out = self.value().matmul(&other.value())?;
        Ok(self.tape.binary(self, other, out, Op::MatMul(self.id, other.id)))
    }

    /// `m · self` for a constant sparse `m`.
    pub fn spmm(self, m: &Rc<SparseMatrix>) -> Result<Var<'t>> {
        let out = m.spmm(&self.value())?;
        Ok(self.tape.unary(self, out, Op::SpMM(Rc::clone(m), self.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let out = self.value().map(|v| v.max(0.0));
        self.tape.unary(self, out, Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        self.tape.unary(self, out, Op::Exp(self.id))
    }

    /// `log(x + 1e-12)`.
    pub fn log_eps(self) -> Var<'t> {
        let out = self.value().map(|v| (v + LOG_EPS).ln());
        self.tape.unary(self, out, Op::LogEps(self.id))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("add of {:?} and {:?}", a.shape(), b.shape())));
        }
        let mut out = (*a).clone();
        out.add_scaled(1.0, &b);
        Ok(self.tape.binary(self, other, out, Op::Add(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v * c);
        self.tape.unary(self, out, Op::Scale(self.id, c))
    }

    /// Adds the `1 x cols` row `bias` to every row.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let (a, b) = (self.value(), bias.value());
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(Error::Shape(format!("bias {:?} for {:?}", b.shape(), a.shape())));
        }
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.tape.binary(self, bias, out, Op::AddRowBias(self.id, bias.id)))
    }

    /// `[self | other]`; a zero-column `other` leaves `self` unchanged.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if b.cols() == 0 && (b.rows() == a.rows() || b.rows() == 0) {
            return Ok(self);
        }
        if a.rows() != b.rows() {
            return Err(Error::Shape(format!("concat of {} rows with {} rows", a.rows(), b.rows())));
        }
        let (p, q) = (a.cols(), b.cols());
        let out = Tensor::from_fn(a.rows(), p + q, |i, j| if j < p { a.get(i, j) } else { b.get(i, j - p) });
        Ok(self.tape.binary(self, other, out, Op::ConcatCols(self.id, other.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.unary(self, out, Op::Sum(self.id))
    }

    /// `Σ w_m x_m` over the flattened values with constant weights.
    pub fn weighted_sum(self, weights: Vec<f64>) -> Result<Var<'t>> {
        let a = self.value();
        if weights.len() != a.len() {
            return Err(Error::Shape(format!("{} weights for {} values", weights.len(), a.len())));
        }
        let s = a.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.tape.unary(self, Tensor::scalar(s), Op::WeightedSum(self.id, Rc::new(weights))))
    }

    /// Multiplies by a constant elementwise mask (inverted dropout).
    pub fn dropout_mask(self, mask: Vec<f64>) -> Result<Var<'t>> {
        let a = self.value();
        if mask.len() != a.len() {
            return Err(Error::Shape(format!("dropout mask of {} for {} values", mask.len(), a.len())));
        }
        let out = Tensor::from_vec(a.rows(), a.cols(), a.data().iter().zip(&mask).map(|(x, m)| x * m).collect())?;
        Ok(self.tape.unary(self, out, Op::Dropout(self.id, Rc::new(mask))))
    }

    /// Mean over `mask` of `−log softmax(logits)[i, labels[i]]`.
    pub fn masked_cross_entropy(self, labels: &Rc<Vec<usize>>, mask: &Rc<Vec<usize>>) -> Result<Var<'t>> {
        if mask.is_empty() {
            return Err(Error::EmptyMask("cross-entropy"));
        }
        let logits = self.value();
        let (n, c) = logits.shape();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows of logits", labels.len())));
        }
        let mut probs = Tensor::zeros(n, c);
        let mut total = 0.0;
        for &i in mask.iter() {
            let y = labels[i];
            if y >= c {
                return Err(Error::InvalidArgument(format!("label {y} of node {i} not below {c} classes")));
            }
            let row = logits.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let log_z = mx + z.ln();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            total += log_z - row[y];
        }
        let out = Tensor::scalar(total / mask.len() as f64);
        let op = Op::CrossEntropy { logits: self.id, probs, labels: Rc::clone(labels), mask: Rc::clone(mask) };
        Ok(self.tape.unary(self, out, op))
    }

    /// Dense `P_ij = exp(−‖v_i − v_j‖² / exp(log_phi))`. `self` is `v`.
    pub fn edge_probabilities(self, log_phi: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&log_phi);
        let phi = scalar_phi(&log_phi)?;
        let out = edge_probability_matrix(&self.value(), phi);
        Ok(self.tape.binary(self, log_phi, out, Op::EdgeProbabilities { v: self.id, log_phi: log_phi.id }))
    }

    /// Dense `A ◇ self`, differentiable with respect to `self`.
    pub fn prob_boolean_product(self, adj: &Rc<SparseAdjacency>) -> Result<Var<'t>> {
        let out = crate::graph::row_mean_product(adj, &self.value())?;
        Ok(self.tape.unary(self, out, Op::ProbBooleanProduct(Rc::clone(adj), self.id)))
    }

    /// Entries at `pairs` as an `m x 1` column.
    pub fn gather(self, pairs: Vec<(usize, usize)>) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= a.rows() || j >= a.cols()) {
            return Err(Error::Shape(format!("gather of ({i}, {j}) from {:?}", a.shape())));
        }
        let out = Tensor::from_vec(pairs.len(), 1, pairs.iter().map(|&(i, j)| a.get(i, j)).collect())?;
        Ok(self.tape.unary(self, out, Op::Gather(self.id, Rc::new(pairs))))
    }

    /// Fused probabilities `p̃_ij` at `pairs` as an `m x 1` column, computed
    /// from the embeddings `self` without forming any `n x n` matrix.
    /// Equivalent to `gather(fuse(adj, edge_probabilities(self, log_phi)))`.
    pub fn fused_pair_probs(
        self,
        log_phi: Var<'t>,
        adj: &Rc<SparseAdjacency>,
        pairs: Vec<(usize, usize)>,
        mode: FusionMode,
    ) -> Result<Var<'t>> {
        self.same_tape(&log_phi);
        let v = self.value();
        if adj.n() != v.rows() {
            return Err(Error::NodeCount { left: adj.n(), right: v.rows() });
        }
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= v.rows() || j >= v.rows()) {
            return Err(Error::Shape(format!("pair ({i}, {j}) out of range for {} nodes", v.rows())));
        }
        let phi = scalar_phi(&log_phi)?;
        let vals = pairs.iter().map(|&(i, j)| fused_prob_at(&v, phi, adj, mode, i, j)).collect();
        let out = Tensor::from_vec(pairs.len(), 1, vals)?;
        let op = Op::FusedPairProbs {
            v: self.id,
            log_phi: log_phi.id,
            adj: Rc::clone(adj),
            pairs: Rc::new(pairs),
            mode,
        };
        Ok(self.tape.binary(self, log_phi, out, op))
    }

    /// One GCN propagation `Â · self` with `Â = gcn_normalize(adj)`.
    pub fn gcn_propagate(self, adj: &SparseAdjacency) -> Result<Var<'t>> {
        self.spmm(&Rc::new(gcn_normalize(adj)))
    }
}

fn scalar_phi(log_phi: &Var<'_>) -> Result<f64> {
    let lp = log_phi.value();
    if lp.shape() != (1, 1) {
        return Err(Error::Shape(format!("log temperature must be 1x1, got {:?}", lp.shape())));
    }
    Ok(lp.item().exp())
}

/// `P_ij = exp(−‖v_i − v_j‖² / φ)` for all pairs.
pub fn edge_probability_matrix(v: &Tensor, phi: f64) -> Tensor {
    let mut out = Tensor::zeros(v.rows(), v.rows());
    kernel_columns(v, &sq_norms(v), phi, 0, &mut out);
    out
}

pub(crate) fn sq_norms(v: &Tensor) -> Vec<f64> {
    (0..v.rows()).map(|i| v.row(i).iter().map(|x| x * x).sum()).collect()
}

/// Columns `start..start + out.cols()` of `exp(−‖v_i − v_j‖² / φ)` through
/// `‖v_i‖² + ‖v_j‖² − 2 v_i·v_j`; the diagonal is exactly 1.
pub(crate) fn kernel_columns(v: &Tensor, norms: &[f64], phi: f64, start: usize, out: &mut Tensor) {
    let w = out.cols();
    let block = Tensor::from_fn(w, v.cols(), |t, c| v.get(start + t, c));
    gemm(false, v, true, &block, 0.0, out);
    let inv = 1.0 / phi;
    for i in 0..v.rows() {
        let ni = norms[i];
        for (t, o) in out.row_mut(i).iter_mut().enumerate() {
            let d2 = (ni + norms[start + t] - 2.0 * *o).max(0.0);
            *o = (-d2 * inv).exp();
        }
        if (start..start + w).contains(&i) {
            out.set(i, i - start, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_exp_values() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
        let z = tape.param(Tensor::scalar(0.0));
        assert_eq!(z.exp().item(), 1.0);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let tape = Tape::new();
        let a = tape.param(Tensor::from_fn(3, 2, |i, j| (i + j) as f64));
        let e = tape.constant(Tensor::empty(3));
        let c = a.concat_cols(e).unwrap();
        assert_eq!(c.id(), a.id());
    }

    #[test]
    fn concat_shapes() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 1));
        let b = tape.param(Tensor::zeros(2, 2));
        assert_eq!(a.concat_cols(b).unwrap().shape(), (2, 3));
        let c = tape.param(Tensor::zeros(3, 2));
        assert!(a.concat_cols(c).is_err());
    }

    #[test]
    fn uniform_logits_give_log2() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::zeros(4, 2));
        let labels = Rc::new(vec![0, 1, 1, 0]);
        let mask = Rc::new(vec![0, 1, 2, 3]);
        let loss = logits.masked_cross_entropy(&labels, &mask).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]]).unwrap());
        let loss = logits.masked_cross_entropy(&Rc::new(vec![0, 2]), &Rc::new(vec![0, 1])).unwrap();
        assert!(loss.item() < 1e-20);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::zeros(2, 2));
        let r = logits.masked_cross_entropy(&Rc::new(vec![0, 1]), &Rc::new(vec![]));
        assert!(matches!(r, Err(Error::EmptyMask(_))));
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.add(x).unwrap().add(x.scale(2.0)).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 4.0);
    }

    #[test]
    fn no_grad_tape_matches_recording_tape() {
        let run = |tape: &Tape| {
            let a = tape.param(Tensor::from_fn(3, 4, |i, j| (i as f64 - 1.0) * 0.3 + j as f64 * 0.1));
            let b = tape.param(Tensor::from_fn(4, 2, |i, j| (i * 2 + j) as f64 * 0.05 - 0.2));
            let h = a.matmul(b).unwrap().relu().exp();
            h.value().data().to_vec()
        };
        let a = run(&Tape::new());
        let b = run(&Tape::no_grad());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param(Tensor::scalar(5.0));
        let y = c.matmul(p).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().item(), 2.0);
    }

    #[test]
    fn edge_probabilities_closed_form() {
        let v = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        let p = edge_probability_matrix(&v, 1.0);
        assert!((p.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(p.get(0, 2), 1.0);
        assert_eq!(p.get(1, 1), 1.0);
    }
}
