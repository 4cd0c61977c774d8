//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node that owns its forward value
//! and remembers its inputs. Node indices grow monotonically, so sweeping the
//! tape from the end visits each node once in reverse topological order.
//! Parameters are borrowed from a [`ParamStore`] rather than copied, and each
//! parameter is bound to at most one leaf per graph.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::matrix::{gemm_nt, gemm_tn, Matrix};
use crate::error::{Error, Result};

/// Handle to a trainable matrix inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct ParamEntry {
    name: String,
    value: Matrix,
}

/// Named collection of trainable matrices.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data().len()).sum()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.value.data())
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Recip(Var),
    Exp(Var),
    Tanh(Var),
    Square(Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    LeakyRelu(Var, f64),
    RowNorm(Var),
    Sum(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Hinge {
        scores: Var,
        truth: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// A single forward computation recorded for differentiation.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    store: Option<&'a ParamStore>,
    bound: Vec<Option<Var>>,
    perturb: Option<(ParamId, usize, f64)>,
}

impl<'a> Graph<'a> {
    /// A graph without parameters (constants only).
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            bound: Vec::new(),
            perturb: None,
        }
    }

    /// A graph whose [`Graph::param`] leaves borrow from `store`.
    pub fn with_params(store: &'a ParamStore) -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            store: Some(store),
            bound: vec![None; store.len()],
            perturb: None,
        }
    }

    /// Reads entry `k` of parameter `id` as `value` instead of the stored one.
    pub fn perturbed(mut self, id: ParamId, k: usize, value: f64) -> Self {
        self.perturb = Some((id, k, value));
        self
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Matrix, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Which side of its kink every piecewise-linear input sits on: one flag
    /// per leaky-ReLU input entry and per hinge term. Two evaluations with
    /// equal signatures lie on the same smooth piece of the loss.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu(a, _) => sig.extend(self.value(a).data().iter().map(|&x| x >= 0.0)),
                Op::Hinge { scores, truth } => {
                    let s = self.value(scores).data();
                    sig.extend(s.iter().map(|&si| 1.0 + si - s[truth] > 0.0));
                }
                _ => {}
            }
        }
        sig
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.owned(m, Op::Leaf)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(id.0).copied().flatten() {
            return v;
        }
        let store = self
            .store
            .expect("Graph::param called on a graph without a parameter store");
        let value = match self.perturb {
            Some((pid, k, x)) if pid == id => {
                let mut m = store.get(id).clone();
                m.data_mut()[k] = x;
                Cow::Owned(m)
            }
            _ => Cow::Borrowed(store.get(id)),
        };
        let v = self.push(value, Op::Param(id));
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.owned(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.owned(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.owned(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.owned(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.owned(out, Op::Mul(a, b)))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.owned(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.owned(out, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.owned(out, Op::AddConst(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / x);
        self.owned(out, Op::Recip(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.owned(out, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.owned(out, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.owned(out, Op::Square(a))
    }

    /// `diag(v) · m` for an `n×1` column `v`.
    pub fn scale_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if vv.cols() != 1 || vv.rows() != mv.rows() {
            return Err(Error::Shape(format!(
                "scale_rows: {:?} by {:?}",
                mv.shape(),
                vv.shape()
            )));
        }
        let mut out = mv.clone();
        for i in 0..out.rows() {
            let s = vv[(i, 0)];
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.owned(out, Op::ScaleRows(m, v)))
    }

    /// `m · diag(v)` for an `n×1` column `v`.
    pub fn scale_cols(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if vv.cols() != 1 || vv.rows() != mv.cols() {
            return Err(Error::Shape(format!(
                "scale_cols: {:?} by {:?}",
                mv.shape(),
                vv.shape()
            )));
        }
        let mut out = mv.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(vv.data()) {
                *x *= s;
            }
        }
        Ok(self.owned(out, Op::ScaleCols(m, v)))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        self.owned(out, Op::RowSoftmax(a))
    }

    /// Row-wise layer normalisation with `1×d` gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(Error::Shape(format!(
                "layer_norm over {d} columns with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let (xhat, inv_std) = normalize_rows(xv, eps);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for i in 0..out.rows() {
            for ((o, gv), bv) in out.row_mut(i).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.owned(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.owned(out, Op::LeakyRelu(a, slope))
    }

    /// Euclidean norm of each row, as an `n×1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = (0..av.rows())
            .map(|i| av.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.owned(Matrix::column(&norms), Op::RowNorm(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.owned(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                av.rows()
            )));
        }
        let out = av.slice_rows(start, len);
        Ok(self.owned(out, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vstack(&mats)?;
        Ok(self.owned(out, Op::ConcatRows(parts.to_vec())))
    }

    /// `−log softmax(logits)[target]` for a `1×k` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != 1 || target >= lv.cols() {
            return Err(Error::Shape(format!(
                "cross_entropy target {target} for logits {:?}",
                lv.shape()
            )));
        }
        let probs = row_softmax(lv).into_vec();
        let loss = log_sum_exp(lv.data()) - lv.data()[target];
        Ok(self.owned(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// `Σ_i max(0, 1 + s_i − s_truth)` over a `1×n` score row, `i = truth` included.
    pub fn hinge(&mut self, scores: Var, truth: usize) -> Result<Var> {
        let sv = self.value(scores);
        if sv.rows() != 1 || truth >= sv.cols() {
            return Err(Error::Shape(format!(
                "hinge truth {truth} for scores {:?}",
                sv.shape()
            )));
        }
        let st = sv.data()[truth];
        let loss: f64 = sv.data().iter().map(|s| (1.0 + s - st).max(0.0)).sum();
        Ok(self.owned(Matrix::scalar(loss), Op::Hinge { scores, truth }))
    }

    /// Propagates gradients from the scalar node `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                params.push((id, g));
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| -> &Matrix { &self.nodes[v.0].value };
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                gemm_nt(g, bv, &mut da);
                accumulate(grads, *a, da);
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                gemm_tn(av, g, &mut db);
                accumulate(grads, *b, db);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(val(*b), |x, y| x * y).expect("shape");
                let db = g.zip_map(val(*a), |x, y| x * y).expect("shape");
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                let da = g.zip_map(bv, |x, y| x / y).expect("shape");
                // d(a/b)/db = −(a/b)/b
                let ob = out.zip_map(bv, |q, y| -q / y).expect("shape");
                let db = g.zip_map(&ob, |x, y| x * y).expect("shape");
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddConst(a) => accumulate(grads, *a, g.clone()),
            Op::Recip(a) => {
                let d = g.zip_map(out, |x, r| -x * r * r).expect("shape");
                accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.zip_map(out, |x, e| x * e).expect("shape");
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(out, |x, t| x * (1.0 - t * t)).expect("shape");
                accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), |x, v| 2.0 * x * v).expect("shape");
                accumulate(grads, *a, d);
            }
            Op::ScaleRows(m, v) => {
                let (mv, vv) = (val(*m), val(*v));
                let mut dm = g.clone();
                let mut dv = Matrix::zeros(vv.rows(), 1);
                for i in 0..mv.rows() {
                    let s = vv[(i, 0)];
                    dv[(i, 0)] = g.row(i).iter().zip(mv.row(i)).map(|(x, y)| x * y).sum();
                    dm.row_mut(i).iter_mut().for_each(|x| *x *= s);
                }
                accumulate(grads, *m, dm);
                accumulate(grads, *v, dv);
            }
            Op::ScaleCols(m, v) => {
                let (mv, vv) = (val(*m), val(*v));
                let mut dm = g.clone();
                let mut dv = Matrix::zeros(vv.rows(), 1);
                for i in 0..mv.rows() {
                    for (j, (x, y)) in g.row(i).iter().zip(mv.row(i)).enumerate() {
                        dv[(j, 0)] += x * y;
                    }
                    for (x, s) in dm.row_mut(i).iter_mut().zip(vv.data()) {
                        *x *= s;
                    }
                }
                accumulate(grads, *m, dm);
                accumulate(grads, *v, dv);
            }
            Op::RowSoftmax(a) => {
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in d.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain);
                let (n, d) = xhat.shape();
                let mut dgain = Matrix::zeros(1, d);
                let mut dbias = Matrix::zeros(1, d);
                let mut dx = Matrix::zeros(n, d);
                let df = d as f64;
                let mut dxhat = vec![0.0; d];
                for i in 0..n {
                    let (gr, xh) = (g.row(i), xhat.row(i));
                    for j in 0..d {
                        dgain.data_mut()[j] += gr[j] * xh[j];
                        dbias.data_mut()[j] += gr[j];
                        dxhat[j] = gr[j] * gv.data()[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xh).map(|(p, q)| p * q).sum();
                    let inv = inv_std[i];
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = inv / df * (df * dxhat[j] - s1 - xh[j] * s2);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dgain);
                accumulate(grads, *bias, dbias);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g
                    .zip_map(val(*a), |x, v| if v >= 0.0 { x } else { slope * x })
                    .expect("shape");
                accumulate(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let av = val(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let nrm = out[(i, 0)];
                    if nrm > 0.0 {
                        let s = g[(i, 0)] / nrm;
                        for (o, x) in d.row_mut(i).iter_mut().zip(av.row(i)) {
                            *o = s * x;
                        }
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    accumulate(grads, *p, g.slice_rows(offset, rows));
                    offset += rows;
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let mut d = probs.clone();
                d[*target] -= 1.0;
                let s = g[(0, 0)];
                d.iter_mut().for_each(|x| *x *= s);
                accumulate(grads, *logits, Matrix::row_vector(&d));
            }
            Op::Hinge { scores, truth } => {
                let sv = val(*scores);
                let st = sv.data()[*truth];
                let s = g[(0, 0)];
                let mut d = vec![0.0; sv.cols()];
                for (i, &si) in sv.data().iter().enumerate() {
                    if 1.0 + si - st > 0.0 {
                        d[i] += s;
                        d[*truth] -= s;
                    }
                }
                accumulate(grads, *scores, Matrix::row_vector(&d));
            }
        }
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_scaled(&d, 1.0),
        slot @ None => *slot = Some(d),
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    /// Gradient with respect to any node, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter bound on the graph.
    pub fn params(&self) -> &[(ParamId, Matrix)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn into_params(self) -> Vec<(ParamId, Matrix)> {
        self.params
    }
}

/// Numerically stable row-wise softmax.
pub fn row_softmax(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-row standardisation; returns the normalised rows and `1/sqrt(var + eps)`.
pub fn normalize_rows(a: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let d = a.cols() as f64;
    let mut out = a.clone();
    let mut inv_std = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
        inv_std.push(inv);
    }
    (out, inv_std)
}
