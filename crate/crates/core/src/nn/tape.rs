//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are
//! either constants or parameters read from a [`ParamStore`];
//! [`Tape::backward`] accumulates `d loss / d param` into the store's grad
//! buffers. Nodes that depend on no parameter are never differentiated.

use std::rc::Rc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A `rows x num_cols` 0/1 matrix in CSR form, used as the constant left
/// operand of [`Tape::sparse_matmul`].
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub num_cols: usize,
}

impl SparseRows {
    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Dense copy, for tests and small graphs.
    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows(), self.num_cols);
        for r in 0..self.rows() {
            for &c in self.row(r) {
                out.set(r, c, out.get(r, c) + 1.0);
            }
        }
        out
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    SparseMatMul(Rc<SparseRows>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Var, Var),
    Softmax(Var),
    SelectCol(Var, usize),
    Sum(Var),
    WeightedCe {
        logits: Var,
        weights: Var,
        labels: Rc<[usize]>,
        denom: f64,
        probs: Tensor,
        losses: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite tensor produced on tape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Reads a parameter as a constant; no gradient reaches it.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `S · w` for a constant 0/1 sparse `S`; costs O(nnz · cols(w)).
    pub fn sparse_matmul(&mut self, s: Rc<SparseRows>, w: Var) -> Result<Var> {
        let wv = self.value(w);
        if s.num_cols != wv.rows() {
            return Err(Error::Shape(format!(
                "sparse {}x{} by {}x{}",
                s.rows(),
                s.num_cols,
                wv.rows(),
                wv.cols()
            )));
        }
        let h = wv.cols();
        let mut out = Tensor::zeros(s.rows(), h);
        for r in 0..s.rows() {
            let out_row = out.row_mut(r);
            for &c in s.row(r) {
                for (o, x) in out_row.iter_mut().zip(wv.row(c)) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(w);
        Ok(self.push(out, Op::SparseMatMul(s, w), rg))
    }

    /// Adds a `1 x cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut data = Vec::with_capacity(av.rows() * (av.cols() + bv.cols()));
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::from_vec(av.rows(), av.cols() + bv.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Column `k` as a `rows x 1` tensor.
    pub fn select_col(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        if k >= xv.cols() {
            return Err(Error::Shape(format!("column {k} of {:?}", xv.shape())));
        }
        let col: Vec<f64> = (0..xv.rows()).map(|r| xv.get(r, k)).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::column(&col), Op::SelectCol(x, k), rg))
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Sum of several `1 x 1` scalars.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::Shape("add_all of nothing".into()))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// Inverted dropout: zeroes entries with probability `rate` and rescales
    /// the survivors. A no-op when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = self.value(x).shape();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::from_vec(r, c, mask)?);
        self.mul(x, m)
    }

    /// `(1/denom) · Σ_i weights_i · CE(logits_i, labels_i)`.
    ///
    /// `weights` is a `B x 1` node and may itself carry gradients.
    pub fn weighted_ce(
        &mut self,
        logits: Var,
        labels: Rc<[usize]>,
        weights: Var,
        denom: f64,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let wv = self.value(weights);
        let (b, c) = lv.shape();
        if labels.len() != b || wv.shape() != (b, 1) {
            return Err(Error::Shape(format!(
                "cross entropy on {:?} logits, {} labels, {:?} weights",
                lv.shape(),
                labels.len(),
                wv.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Shape(format!("label {bad} out of range for {c} classes")));
        }
        if !(denom > 0.0) {
            return Err(Error::Shape(format!("cross entropy denominator {denom}")));
        }
        let probs = softmax_rows(lv);
        let losses: Vec<f64> = (0..b)
            .map(|i| -log_softmax_at(lv.row(i), labels[i]))
            .collect();
        let total: f64 = losses
            .iter()
            .zip(wv.data())
            .map(|(l, w)| l * w)
            .sum::<f64>()
            / denom;
        let rg = self.rg(logits) || self.rg(weights);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedCe {
                logits,
                weights,
                labels,
                denom,
                probs,
                losses,
            },
            rg,
        ))
    }

    /// Mean cross entropy over all rows.
    pub fn mean_ce(&mut self, logits: Var, labels: Rc<[usize]>) -> Result<Var> {
        let b = self.value(logits).rows();
        let ones = self.constant(Tensor::filled(b, 1, 1.0));
        self.weighted_ce(logits, labels, ones, b.max(1) as f64)
    }

    /// Accumulates gradients of the scalar `loss` into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!("backward from {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if !g.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "gradient of {}",
                            store.name(*id)
                        )));
                    }
                    store.grad_mut(*id).add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let mut ga = Tensor::zeros(self.value(*a).rows(), bv.rows());
                        matmul_bt_into(&g, bv, &mut ga);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let mut gb = Tensor::zeros(av.cols(), g.cols());
                        matmul_at_into(av, &g, &mut gb);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SparseMatMul(s, w) => {
                    let wv = self.value(*w);
                    let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                    for r in 0..s.rows() {
                        let g_row = g.row(r);
                        for &c in s.row(r) {
                            for (o, x) in gw.row_mut(c).iter_mut().zip(g_row) {
                                *o += x;
                            }
                        }
                    }
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let mut ga = g.clone();
                        for (o, y) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                            *o *= y;
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let mut gb = g;
                        for (o, y) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                            *o *= y;
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads, *x, g.map(|v| v * s));
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (o, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.rg(*a) {
                        let mut ga = Tensor::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yy), &gg) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yy * (gg - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SelectCol(x, k) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        gx.set(r, *k, g.get(r, 0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::filled(rows, cols, g.item()));
                }
                Op::WeightedCe {
                    logits,
                    weights,
                    labels,
                    denom,
                    probs,
                    losses,
                } => {
                    let up = g.item() / denom;
                    let wv = self.value(*weights);
                    if self.rg(*logits) {
                        let mut gl = probs.clone();
                        for (r, &y) in labels.iter().enumerate() {
                            let w = wv.get(r, 0) * up;
                            let row = gl.row_mut(r);
                            row[y] -= 1.0;
                            for o in row.iter_mut() {
                                *o *= w;
                            }
                        }
                        accumulate(&mut grads, *logits, gl);
                    }
                    if self.rg(*weights) {
                        let gw: Vec<f64> = losses.iter().map(|l| l * up).collect();
                        accumulate(&mut grads, *weights, Tensor::column(&gw));
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[k] - lse
}

/// Per-row cross entropy without building a tape.
pub fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| -log_softmax_at(logits.row(i), labels[i]))
        .collect()
}
