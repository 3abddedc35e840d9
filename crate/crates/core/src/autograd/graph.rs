//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse. Parameter leaves share their tensor with the
//! [`ParamStore`] through an `Arc`, so building a graph does not copy weights.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op<T: Scalar> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Lookup { table: Var, ids: Vec<u32> },
    SoftmaxXent { logits: Var, targets: Vec<Option<u32>>, probs: Tensor<T> },
    Scale(Var, T),
    Mask(Var, Tensor<T>),
    Blend { new: Var, old: Var, take_new: Vec<bool> },
    AddN(Vec<Var>),
    RowDot(Var, Var),
    MaskedSoftmax(Var),
    ScaleRows(Var, Var),
    SumAll(Var),
}

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm_into(false, false, m, k, n, self.value(a).data(), self.value(b).data(), T::zero(), out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        if ac != bc || (br != ar && br != 1) {
            return Err(shape_err("add", format!("[{ar}, {ac}] + [{br}, {bc}]")));
        }
        let mut out = Tensor::zeros(&[ar, ac]);
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let o = out.data_mut();
            for r in 0..ar {
                let brow = if br == 1 { 0 } else { r };
                for c in 0..ac {
                    o[r * ac + c] = av[r * ac + c] + bv[brow * bc + c];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dims2() != self.value(b).dims2() {
            return Err(shape_err("mul", format!("{:?} * {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(shape_err("concat", format!("row counts differ: {shapes:?}")));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2();
        if start >= end || end > cols {
            return Err(shape_err("slice", format!("columns {start}..{end} of [{rows}, {cols}]")));
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&self.value(x).row_slice(r)[start..end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, end - start, out)?, Op::Slice { x, start }, rg))
    }

    /// Gathers rows of `table` by id, producing `[ids.len(), cols]`.
    pub fn lookup(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (rows, cols) = self.value(table).dims2();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id as usize >= rows {
                return Err(shape_err("lookup", format!("id {id} outside table of {rows} rows")));
            }
            out.extend_from_slice(self.value(table).row_slice(id as usize));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), cols, out)?,
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax.
    ///
    /// Rows whose target is `None` (padding) contribute nothing.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<u32>]) -> Result<Var> {
        let (rows, cols) = self.value(logits).dims2();
        if targets.len() != rows {
            return Err(shape_err("softmax_cross_entropy", format!("{} targets for {rows} rows", targets.len())));
        }
        let mut probs = Tensor::zeros(&[rows, cols]);
        let mut loss = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let row = self.value(logits).row_slice(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs.data_mut()[r * cols..(r + 1) * cols];
            let mut z = T::zero();
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
            if let Some(t) = *target {
                if t as usize >= cols {
                    return Err(shape_err("softmax_cross_entropy", format!("target {t} outside {cols} classes")));
                }
                loss += z.ln() + max - row[t as usize];
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Inverted dropout: zero each entry with probability `rate` and scale
    /// survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let shape = self.value(x).shape().to_vec();
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = Tensor::new(shape, mask)?;
        let out = self.value(x).zip_map(&mask, |a, m| a * m);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mask(x, mask), rg))
    }

    /// Row-wise select: row `r` comes from `new` when `take_new[r]`, else from `old`.
    pub fn blend(&mut self, new: Var, old: Var, take_new: &[bool]) -> Result<Var> {
        let (r, c) = self.value(new).dims2();
        if self.value(old).dims2() != (r, c) || take_new.len() != r {
            return Err(shape_err("blend", format!("{:?} vs {:?} with {} flags", self.value(new).shape(), self.value(old).shape(), take_new.len())));
        }
        let mut out = Vec::with_capacity(r * c);
        for (row, &t) in take_new.iter().enumerate() {
            let src = if t { new } else { old };
            out.extend_from_slice(self.value(src).row_slice(row));
        }
        let rg = self.rg(new) || self.rg(old);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::Blend {
                new,
                old,
                take_new: take_new.to_vec(),
            },
            rg,
        ))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("add_n", "no inputs".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            if self.value(p).dims2() != out.dims2() {
                return Err(shape_err("add_n", format!("{:?} vs {:?}", out.shape(), self.value(p).shape())));
            }
            out.add_assign(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::AddN(parts.to_vec()), rg))
    }

    /// Row-wise inner product `[B, n] . [B, n] -> [B, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        if self.value(b).dims2() != (r, c) {
            return Err(shape_err("row_dot", format!("{:?} . {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let out = (0..r)
            .map(|i| {
                self.value(a)
                    .row_slice(i)
                    .iter()
                    .zip(self.value(b).row_slice(i))
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, 1, out)?, Op::RowDot(a, b), rg))
    }

    /// Row-wise softmax where entries at `-inf` get probability zero.
    pub fn masked_softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = self.value(x).row_slice(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = &mut out.data_mut()[i * c..(i + 1) * c];
            if max == T::neg_infinity() {
                continue;
            }
            let mut z = T::zero();
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = if v == T::neg_infinity() { T::zero() } else { (v - max).exp() };
                z += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= z;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::MaskedSoftmax(x), rg)
    }

    /// Multiplies each row of `a` (`[B, n]`) by the matching entry of `s` (`[B, 1]`).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        if self.value(s).dims2() != (r, 1) {
            return Err(shape_err("scale_rows", format!("{:?} by {:?}", self.value(a).shape(), self.value(s).shape())));
        }
        let mut out = self.value(a).clone();
        for i in 0..r {
            let f = self.value(s).data()[i];
            out.data_mut()[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleRows(a, s), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).cols();
                    if self.rg(*a) {
                        let ga = grad_slot(&mut grads, *a, &[m, k]);
                        gemm_into(false, true, m, n, k, g.data(), self.value(*b).data(), T::one(), ga.data_mut());
                    }
                    if self.rg(*b) {
                        let gb = grad_slot(&mut grads, *b, &[k, n]);
                        gemm_into(true, false, k, m, n, self.value(*a).data(), g.data(), T::one(), gb.data_mut());
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        let bshape = self.value(*b).shape().to_vec();
                        let gb = grad_slot(&mut grads, *b, &bshape);
                        if self.value(*b).rows() == g.rows() {
                            gb.add_assign(&g);
                        } else {
                            let c = g.cols();
                            for r in 0..g.rows() {
                                for (acc, &x) in gb.data_mut().iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                                    *acc += x;
                                }
                            }
                        }
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let d = g.zip_map(self.value(*b), |x, y| x * y);
                        accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = g.zip_map(self.value(*a), |x, y| x * y);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Sigmoid(x) => {
                    let d = g.zip_map(&node.value, |gi, y| gi * y * (T::one() - y));
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let d = g.zip_map(&node.value, |gi, y| gi * (T::one() - y * y));
                    accumulate(&mut grads, *x, d);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut grads, *x, g.map(|v| v * s));
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.rg(p) {
                            let gp = grad_slot(&mut grads, p, &[rows, c]);
                            for r in 0..rows {
                                let src = &g.data()[r * total + offset..r * total + offset + c];
                                for (acc, &x) in gp.data_mut()[r * c..(r + 1) * c].iter_mut().zip(src) {
                                    *acc += x;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    let (rows, cols) = self.value(*x).dims2();
                    let w = g.cols();
                    let gx = grad_slot(&mut grads, *x, &[rows, cols]);
                    for r in 0..rows {
                        let dst = &mut gx.data_mut()[r * cols + start..r * cols + start + w];
                        for (acc, &v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *acc += v;
                        }
                    }
                }
                Op::Lookup { table, ids } => {
                    let (rows, cols) = self.value(*table).dims2();
                    let gt = grad_slot(&mut grads, *table, &[rows, cols]);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                        for (acc, &v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *acc += v;
                        }
                    }
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let scale = g.item();
                    let (rows, cols) = probs.dims2();
                    let gl = grad_slot(&mut grads, *logits, &[rows, cols]);
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let p = probs.row_slice(r);
                        let dst = &mut gl.data_mut()[r * cols..(r + 1) * cols];
                        for (j, (acc, &pj)) in dst.iter_mut().zip(p).enumerate() {
                            let y = if j == t as usize { T::one() } else { T::zero() };
                            *acc += scale * (pj - y);
                        }
                    }
                }
                Op::Mask(x, mask) => {
                    accumulate(&mut grads, *x, g.zip_map(mask, |a, m| a * m));
                }
                Op::Blend { new, old, take_new } => {
                    let c = g.cols();
                    for (which, want) in [(*new, true), (*old, false)] {
                        if !self.rg(which) {
                            continue;
                        }
                        let shape = self.value(which).shape().to_vec();
                        let gw = grad_slot(&mut grads, which, &shape);
                        for (r, &t) in take_new.iter().enumerate() {
                            if t == want {
                                for (acc, &v) in gw.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.row_slice(r)) {
                                    *acc += v;
                                }
                            }
                        }
                    }
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        if self.rg(p) {
                            accumulate(&mut grads, p, g.clone());
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (r, c) = self.value(*a).dims2();
                    for (this, other) in [(*a, *b), (*b, *a)] {
                        if !self.rg(this) {
                            continue;
                        }
                        let mut d = self.value(other).clone();
                        for i in 0..r {
                            let gi = g.data()[i];
                            d.data_mut()[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= gi);
                        }
                        accumulate(&mut grads, this, d);
                    }
                }
                Op::MaskedSoftmax(x) => {
                    let y = &node.value;
                    let (r, c) = y.dims2();
                    let mut d = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            d.data_mut()[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::ScaleRows(a, s) => {
                    let (r, c) = self.value(*a).dims2();
                    if self.rg(*a) {
                        let mut d = g.clone();
                        for i in 0..r {
                            let f = self.value(*s).data()[i];
                            d.data_mut()[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= f);
                        }
                        accumulate(&mut grads, *a, d);
                    }
                    if self.rg(*s) {
                        let ds = (0..r)
                            .map(|i| g.row_slice(i).iter().zip(self.value(*a).row_slice(i)).map(|(&x, &y)| x * y).sum())
                            .collect();
                        accumulate(&mut grads, *s, Tensor::matrix(r, 1, ds)?);
                    }
                }
                Op::SumAll(x) => {
                    let gi = g.item();
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::full(&shape, gi));
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            let Some(g) = grads[i].take() else { continue };
            match node.op {
                Op::Param(id) => out.params.push((id, g)),
                Op::Leaf if node.requires_grad => {
                    out.leaves.insert(i, g);
                }
                _ => {}
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

fn grad_slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        t(rows, cols, &(0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    /// Central-difference check of d(build)/d(leaf) for every leaf.
    fn check<F>(leaves: Vec<Tensor<f64>>, build: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let eval = |vals: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|v| g.variable(v.clone())).collect();
            let out = build(&mut g, &vars);
            (g.value(out).item(), g, vars, out)
        };
        let (_, g, vars, out) = eval(&leaves);
        let grads = g.backward(out).unwrap();
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.wrt(vars[li]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
            for j in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[j] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[j] -= h;
                let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel <= 1e-4 || (a - numeric).abs() < 1e-9, "leaf {li}[{j}]: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn activation_identities() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1, 1]));
        let s = g.sigmoid(z);
        let th = g.tanh(z);
        assert_eq!(g.value(s).item(), 0.5);
        assert_eq!(g.value(th).item(), 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[1, 2]));
        let loss = g.softmax_cross_entropy(l, &[Some(0)]).unwrap();
        assert!((g.value(loss).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient_is_input() {
        let x = t(1, 3, &[0.3, -1.2, 2.0]);
        let mut g = Graph::new();
        let w = g.variable(t(3, 1, &[1.0, 2.0, 3.0]));
        let xv = g.constant(x.clone());
        let y = g.matmul(xv, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), x.data());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.variable(t(1, 2, &[1.0, 2.0]));
        let zero = g.scale(w, 0.0);
        let loss = g.sum_all(zero);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let w = g.variable(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul") && err.to_string().contains("[2, 3]"));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.mul(a, c).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let leaves = vec![random(3, 4, &mut rng), random(4, 5, &mut rng), random(1, 5, &mut rng), random(3, 5, &mut rng)];
        check(leaves, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let a = g.add(m, v[2]).unwrap();
            let s = g.sigmoid(a);
            let th = g.tanh(v[3]);
            let p = g.mul(s, th).unwrap();
            let c = g.concat(&[p, a]).unwrap();
            let sl = g.slice(c, 2, 8).unwrap();
            let l = g.softmax_cross_entropy(sl, &[Some(1), None, Some(5)]).unwrap();
            let sc = g.scale(l, 0.7);
            let extra = g.sum_all(th);
            g.add_n(&[sc, extra]).unwrap()
        });
    }

    #[test]
    fn attention_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let leaves = vec![random(2, 3, &mut rng), random(2, 3, &mut rng), random(2, 3, &mut rng), random(5, 3, &mut rng)];
        check(leaves, |g, v| {
            let d0 = g.row_dot(v[0], v[1]).unwrap();
            let d1 = g.row_dot(v[0], v[2]).unwrap();
            let ninf = g.constant(t(2, 1, &[0.0, f64::NEG_INFINITY]));
            let d1m = g.add(d1, ninf).unwrap();
            let scores = g.concat(&[d0, d1m]).unwrap();
            let w = g.masked_softmax(scores);
            let w0 = g.slice(w, 0, 1).unwrap();
            let w1 = g.slice(w, 1, 2).unwrap();
            let c0 = g.scale_rows(v[1], w0).unwrap();
            let c1 = g.scale_rows(v[2], w1).unwrap();
            let ctx = g.add_n(&[c0, c1]).unwrap();
            let kept = g.blend(ctx, v[0], &[true, false]).unwrap();
            let table = g.lookup(v[3], &[4, 0, 4]).unwrap();
            let tsum = g.sum_all(table);
            let logits = g.tanh(kept);
            let l = g.softmax_cross_entropy(logits, &[Some(2), Some(0)]).unwrap();
            g.add_n(&[l, tsum]).unwrap()
        });
    }

    #[test]
    fn dropout_is_unbiased_and_identity_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[100, 100], 2.0));
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        let d = g.dropout(x, 0.5, &mut rng).unwrap();
        let mean = g.value(d).sum() / 10_000.0;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }
}
