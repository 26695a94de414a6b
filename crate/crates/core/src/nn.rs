//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations as they run; [`Tape::backward`] walks it in
//! reverse and accumulates parameter gradients into a [`Gradients`] buffer.
//! Parameters live in a [`ParamStore`] and are borrowed, not copied, while a
//! tape is alive. Everything runs at double precision.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// `rows × cols` tensor with entries drawn from `N(0, std²)`.
    pub fn add_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let mut m = Matrix::zeros(rows, cols);
        if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in m.data_mut() {
                *v = dist.sample(rng);
            }
        }
        self.add(name, m)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Matrix::filled(rows, cols, value))
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Replaces a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::arg(alloc::format!("unknown parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::DimensionMismatch { expected: self.values[i].data().len(), found: value.data().len() });
        }
        self.values[i] = value;
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { values: store.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        for (a, b) in self.values[id.0].data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.values {
            m.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flat_map(|m| m.data()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Modulate { x: Var, scale: Var, shift: Var },
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Gather { table: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    SegmentMean { x: Var, segment: Vec<usize>, counts: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, scale: f64, probs: Matrix },
    Mse { pred: Var, target: Matrix, col_mask: Vec<bool>, scale: f64 },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Operation recorder. Borrow the parameters for the lifetime of the tape.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Matrix::zeros(0, 0), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(k, bv.rows(), "matmul inner dimension");
        let mut out = Matrix::zeros(m, n);
        gemm_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(k, bv.cols(), "matmul_nt inner dimension");
        let mut out = Matrix::zeros(m, n);
        gemm_nt_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape");
        self.push(out, Op::Add(a, b))
    }

    /// `x + row` with `row: 1×n` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!((1, xv.cols()), rv.shape(), "add_row shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    /// `x ⊙ row` with `row: 1×n` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!((1, xv.cols()), rv.shape(), "mul_row shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(x, row))
    }

    /// `x ⊙ (1 + scale) + shift` with `1×n` rows broadcast.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (xv, sv, tv) = (self.value(x), self.value(scale), self.value(shift));
        assert_eq!((1, xv.cols()), sv.shape(), "modulate scale shape");
        assert_eq!((1, xv.cols()), tv.shape(), "modulate shift shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for ((o, s), t) in out.row_mut(r).iter_mut().zip(sv.data()).zip(tv.data()) {
                *o = *o * (1.0 + s) + t;
            }
        }
        self.push(out, Op::Modulate { x, scale, shift })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu_parts(v).0);
        self.push(out, Op::Gelu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            rstd.push(s);
        }
        self.push(out, Op::LayerNorm { x, rstd })
    }

    /// Rows of `table` at `idx`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let out = self.value(table).select_rows(idx);
        self.push(out, Op::Gather { table, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Matrix::from_vec(rows, cols, data).expect("shape");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let idx: Vec<usize> = (start..end).collect();
        let out = xv.select_rows(&idx);
        self.push(out, Op::SliceRows { x, start })
    }

    /// Multi-head scaled dot-product attention. `q: n_q×d`, `k, v: n_k×d`.
    /// With `causal`, query `i` only sees keys `j ≤ i` (requires `n_q = n_k`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d) = qv.shape();
        let nk = kv.rows();
        assert_eq!(kv.cols(), d, "attention key width");
        assert_eq!(vv.shape(), (nk, d), "attention value shape");
        assert!(d % heads == 0, "width not divisible by heads");
        assert!(!causal || nq == nk, "causal attention needs square scores");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * nq * nk];
        let mut out = Matrix::zeros(nq, d);
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..heads {
            let off = h * dh;
            for i in 0..nq {
                let limit = if causal { i + 1 } else { nk };
                let p = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let qi = &qd[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for (j, pj) in p.iter_mut().enumerate().take(limit) {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    *pj = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for pj in p.iter_mut().take(limit) {
                    *pj = (*pj - max).exp();
                    sum += *pj;
                }
                let orow = &mut out.data_mut()[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter_mut().enumerate().take(limit) {
                    *pj /= sum;
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += *pj * x;
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    /// Mean of the rows of `x` in each segment; output row `s` averages the
    /// rows with `segment[r] == s`. Empty segments yield zero rows.
    pub fn segment_mean(&mut self, x: Var, segment: &[usize], segments: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(segment.len(), xv.rows(), "segment ids");
        let mut counts = vec![0usize; segments];
        let mut out = Matrix::zeros(segments, xv.cols());
        for (r, &s) in segment.iter().enumerate() {
            counts[s] += 1;
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
            }
        }
        self.push(out, Op::SegmentMean { x, segment: segment.to_vec(), counts })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).rows();
        self.segment_mean(x, &vec![0; n], 1)
    }

    /// `scale · Σ −log softmax(logits_r)[target_r]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], scale: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows(), "cross_entropy targets");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let out = Matrix::filled(1, 1, loss * scale);
        self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), scale, probs })
    }

    /// `scale · Σ (pred − target)²` over columns where `col_mask` is set.
    pub fn mse(&mut self, pred: Var, target: &Matrix, col_mask: &[bool], scale: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "mse shape");
        assert_eq!(col_mask.len(), pv.cols(), "mse mask");
        let mut loss = 0.0;
        for r in 0..pv.rows() {
            for ((p, t), &m) in pv.row(r).iter().zip(target.row(r)).zip(col_mask) {
                if m {
                    loss += (p - t) * (p - t);
                }
            }
        }
        let out = Matrix::filled(1, 1, loss * scale);
        self.push(out, Op::Mse { pred, target: target.clone(), col_mask: col_mask.to_vec(), scale })
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Backpropagates from the scalar `loss`, adding parameter gradients to `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut g: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, &dy),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let ga = slot(&mut g, *a, m, k);
                    gemm_nt_acc(dy.data(), bv.data(), ga.data_mut(), m, n, k);
                    let gb = slot(&mut g, *b, k, n);
                    gemm_tn_acc(av.data(), dy.data(), gb.data_mut(), m, k, n);
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    let ga = slot(&mut g, *a, m, k);
                    gemm_acc(dy.data(), bv.data(), ga.data_mut(), m, n, k);
                    let gb = slot(&mut g, *b, n, k);
                    gemm_tn_acc(dy.data(), av.data(), gb.data_mut(), m, n, k);
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut g, *a, dy.rows(), dy.cols()), &dy);
                    add_into(slot(&mut g, *b, dy.rows(), dy.cols()), &dy);
                }
                Op::AddRow(x, row) => {
                    add_into(slot(&mut g, *x, dy.rows(), dy.cols()), &dy);
                    let gr = slot(&mut g, *row, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::MulRow(x, row) => {
                    let (xv, rv) = (self.value(*x), self.value(*row));
                    let gx = slot(&mut g, *x, dy.rows(), dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, d), s) in gx.row_mut(r).iter_mut().zip(dy.row(r)).zip(rv.data()) {
                            *o += d * s;
                        }
                    }
                    let gr = slot(&mut g, *row, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, d), xv) in gr.data_mut().iter_mut().zip(dy.row(r)).zip(xv.row(r)) {
                            *o += d * xv;
                        }
                    }
                }
                Op::Modulate { x, scale, shift } => {
                    let (xv, sv) = (self.value(*x), self.value(*scale));
                    let gx = slot(&mut g, *x, dy.rows(), dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, d), s) in gx.row_mut(r).iter_mut().zip(dy.row(r)).zip(sv.data()) {
                            *o += d * (1.0 + s);
                        }
                    }
                    let gs = slot(&mut g, *scale, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, d), xv) in gs.data_mut().iter_mut().zip(dy.row(r)).zip(xv.row(r)) {
                            *o += d * xv;
                        }
                    }
                    let gt = slot(&mut g, *shift, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, d) in gt.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = slot(&mut g, *x, dy.rows(), dy.cols());
                    for ((o, d), v) in gx.data_mut().iter_mut().zip(dy.data()).zip(xv.data()) {
                        *o += d * gelu_parts(*v).1;
                    }
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let gx = slot(&mut g, *x, dy.rows(), dy.cols());
                    for ((o, d), v) in gx.data_mut().iter_mut().zip(dy.data()).zip(xv.data()) {
                        let s = sigmoid(*v);
                        *o += d * (s + v * s * (1.0 - s));
                    }
                }
                Op::LayerNorm { x, rstd } => {
                    let y = &self.nodes[i].value;
                    let n = y.cols() as f64;
                    let gx = slot(&mut g, *x, dy.rows(), dy.cols());
                    for r in 0..dy.rows() {
                        let (dyr, yr) = (dy.row(r), y.row(r));
                        let mean_dy = dyr.iter().sum::<f64>() / n;
                        let mean_dyy = dyr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, d), yv) in gx.row_mut(r).iter_mut().zip(dyr).zip(yr) {
                            *o += rstd[r] * (d - mean_dy - yv * mean_dyy);
                        }
                    }
                }
                Op::Gather { table, idx } => {
                    let tv = self.value(*table);
                    let gt = slot(&mut g, *table, tv.rows(), tv.cols());
                    for (r, &t) in idx.iter().enumerate() {
                        for (o, d) in gt.row_mut(t).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let gp = slot(&mut g, p, rows, dy.cols());
                        for r in 0..rows {
                            for (o, d) in gp.row_mut(r).iter_mut().zip(dy.row(offset + r)) {
                                *o += d;
                            }
                        }
                        offset += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let gx = slot(&mut g, *x, xv.rows(), xv.cols());
                    for r in 0..dy.rows() {
                        for (o, d) in gx.row_mut(start + r).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    self.attention_backward(&mut g, &dy, *q, *k, *v, *heads, probs);
                }
                Op::SegmentMean { x, segment, counts } => {
                    let xv = self.value(*x);
                    let gx = slot(&mut g, *x, xv.rows(), xv.cols());
                    for (r, &s) in segment.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for (o, d) in gx.row_mut(r).iter_mut().zip(dy.row(s)) {
                            *o += d * inv;
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, scale, probs } => {
                    let up = dy.data()[0] * scale;
                    let gl = slot(&mut g, *logits, probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = gl.row_mut(r);
                        for (o, p) in row.iter_mut().zip(probs.row(r)) {
                            *o += up * p;
                        }
                        row[t] -= up;
                    }
                }
                Op::Mse { pred, target, col_mask, scale } => {
                    let pv = self.value(*pred);
                    let up = dy.data()[0] * scale * 2.0;
                    let gp = slot(&mut g, *pred, pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let (pr, tr) = (pv.row(r), target.row(r));
                        for (c, o) in gp.row_mut(r).iter_mut().enumerate() {
                            if col_mask[c] {
                                *o += up * (pr[c] - tr[c]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&self, g: &mut [Option<Matrix>], dy: &Matrix, q: Var, k: Var, v: Var, heads: usize, probs: &[f64]) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d) = qv.shape();
        let nk = kv.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Matrix::zeros(nq, d);
        let mut gk = Matrix::zeros(nk, d);
        let mut gv = Matrix::zeros(nk, d);
        let mut dp = vec![0.0; nk];
        let (qd, kd, vd, dyd) = (qv.data(), kv.data(), vv.data(), dy.data());
        for h in 0..heads {
            let off = h * dh;
            for i in 0..nq {
                let p = &probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let dyi = &dyd[i * d + off..i * d + off + dh];
                // dP_ij = dy_i · v_j ; dV_j += P_ij dy_i
                let mut dot = 0.0;
                for j in 0..nk {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + dh];
                    dp[j] = dyi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    let gvj = &mut gv.data_mut()[j * d + off..j * d + off + dh];
                    for (o, x) in gvj.iter_mut().zip(dyi) {
                        *o += p[j] * x;
                    }
                }
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..nk {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let gqi = &mut gq.data_mut()[i * d + off..i * d + off + dh];
                    for (o, x) in gqi.iter_mut().zip(kj) {
                        *o += ds * x;
                    }
                    let gkj = &mut gk.data_mut()[j * d + off..j * d + off + dh];
                    for (o, x) in gkj.iter_mut().zip(qi) {
                        *o += ds * x;
                    }
                }
            }
        }
        add_into(slot(g, q, nq, d), &gq);
        add_into(slot(g, k, nk, d), &gk);
        add_into(slot(g, v, nk, d), &gv);
    }
}

fn slot(g: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut Matrix {
    g[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
        *a += b;
    }
}

/// First-order Adam update with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0), step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        if self.m.len() != params.len() {
            self.m = params.values.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        let clip = match self.clip_norm {
            Some(max) => {
                let n = grads.global_norm();
                if n > max { max / n } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, p) in params.values.iter_mut().enumerate() {
            let g = grads.values[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * clip;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Sinusoidal embedding of a scalar into `width` channels.
pub fn sinusoidal_embedding(value: f64, width: usize) -> Matrix {
    let half = width / 2;
    let mut m = Matrix::zeros(1, width);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        m[(0, i)] = (value * freq).sin();
        m[(0, half + i)] = (value * freq).cos();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of every scalar in `store` for a loss built
    /// by `f`. Returns the worst relative error.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape) -> Var) -> f64 {
        let mut grads = Gradients::zeros_like(store);
        {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss, &mut grads);
        }
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let l = f(&mut tape);
            tape.value(l).data()[0]
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for id in store.ids().collect::<Vec<_>>() {
            for k in 0..store.get(id).data().len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + h;
                let up = eval(store);
                store.get_mut(id).data_mut()[k] = orig - h;
                let down = eval(store);
                store.get_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(id).data()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let ids = shapes.iter().map(|&(n, r, c)| s.add_normal(n, r, c, 0.7, &mut rng)).collect();
        (s, ids)
    }

    #[test]
    fn elementwise_and_norm_ops() {
        let (mut s, ids) = store_with(&[("x", 4, 6), ("w", 6, 5), ("b", 1, 5), ("sc", 1, 5), ("sh", 1, 5), ("t", 7, 5)], 1);
        let worst = check(&mut s, |t| {
            let x = t.param(ids[0]);
            let y = t.linear(x, ids[1], ids[2]);
            let y = t.gelu(y);
            let y = t.layer_norm(y);
            let sc = t.param(ids[3]);
            let sh = t.param(ids[4]);
            let y = t.modulate(y, sc, sh);
            let y = t.silu(y);
            let y2 = t.mul_row(y, sc);
            let y = t.add(y, y2);
            let tab = t.param(ids[5]);
            let gat = t.gather(tab, &[3, 3, 0, 6]);
            let y = t.add(y, gat);
            let m = t.segment_mean(y, &[1, 0, 1, 1], 2);
            let z = t.concat_rows(&[y, m]);
            let z = t.slice_rows(z, 1, 6);
            t.cross_entropy(z, &[Some(1), None, Some(4), Some(0), Some(2)], 0.25)
        });
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn attention_gradients() {
        let (mut s, ids) = store_with(&[("q", 5, 8), ("k", 5, 8), ("v", 5, 8), ("kx", 3, 8)], 2);
        let target = Matrix::filled(5, 8, 0.1);
        let worst = check(&mut s, |t| {
            let q = t.param(ids[0]);
            let k = t.param(ids[1]);
            let v = t.param(ids[2]);
            let a = t.attention(q, k, v, 2, true);
            let kx = t.param(ids[3]);
            let c = t.attention(a, kx, kx, 4, false);
            let r = t.matmul_nt(c, kx);
            let r = t.matmul(r, kx);
            let c = t.add(c, r);
            t.mse(c, &target, &[true, false, true, true, true, true, false, true], 0.5)
        });
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn causal_attention_ignores_future() {
        let (s, ids) = store_with(&[("q", 4, 4), ("k", 4, 4), ("v", 4, 4)], 3);
        let mut s2 = s.clone();
        s2.get_mut(ids[1]).row_mut(3).iter_mut().for_each(|v| *v += 1.0);
        s2.get_mut(ids[2]).row_mut(3).iter_mut().for_each(|v| *v -= 2.0);
        let run = |st: &ParamStore| {
            let mut t = Tape::new(st);
            let (q, k, v) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let a = t.attention(q, k, v, 2, true);
            t.value(a).clone()
        };
        let (a, b) = (run(&s), run(&s2));
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::filled(1, 3, 5.0));
        let target = Matrix::from_vec(1, 3, alloc::vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = Adam::new(0.05);
        opt.clip_norm = None;
        for _ in 0..2000 {
            let mut g = Gradients::zeros_like(&s);
            {
                let mut t = Tape::new(&s);
                let w = t.param(id);
                let l = t.mse(w, &target, &[true; 3], 1.0);
                t.backward(l, &mut g);
            }
            opt.step(&mut s, &g);
        }
        assert!(s.get(id).max_abs_diff(&target) < 1e-3);
    }
}
