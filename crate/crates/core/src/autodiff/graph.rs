//! Reverse-mode tape: ops record themselves during the forward pass and
//! `backward` replays them in reverse construction order.
//!
//! Tensors are handles into a graph. A graph lives for one forward/backward
//! round; training builds a fresh graph every step with the current
//! parameters as leaves.

use super::array::{gemm_into, Array, Real};
use crate::error::{Error, Result};
use crate::rng::counter_uniform;
use rayon::prelude::*;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor(pub(crate) usize);

/// Epsilon inside layer norm's variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive attention-mask value for padded keys.
pub const ATTN_MASK_VALUE: f64 = -1e9;

enum Op<F: Real> {
    Leaf,
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    ScalarMul { a: Tensor, c: F },
    Matmul { a: Tensor, b: Tensor },
    Relu { a: Tensor },
    Abs { a: Tensor },
    Log { a: Tensor },
    Softmax { a: Tensor },
    LayerNorm { a: Tensor, gain: Tensor, bias: Tensor, mean: Vec<F>, rstd: Vec<F> },
    Conv1d { x: Tensor, w: Tensor, b: Tensor, kernel: usize },
    Embedding { table: Tensor, ids: Vec<usize> },
    Dropout { a: Tensor, mask: Vec<F> },
    Concat { parts: Vec<Tensor> },
    SliceLast { a: Tensor, start: usize },
    Transpose { a: Tensor },
    GatherRows { x: Tensor, idx: Vec<usize> },
    Mean { a: Tensor },
    Sum { a: Tensor },
    Grl { a: Tensor },
    Reshape { a: Tensor },
}

struct Node<F: Real> {
    value: Array<F>,
    requires_grad: bool,
    op: Op<F>,
}

/// Reverse-mode computation graph.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Array<F>>>,
    train_mode: bool,
    dropout_seed: u64,
    dropout_step: u64,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    /// Eval-mode graph: dropout is identity.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), train_mode: false, dropout_seed: 0, dropout_step: 0 }
    }

    /// Train-mode graph; dropout masks are keyed by (seed, step, layer, index).
    pub fn for_training(dropout_seed: u64, step: u64) -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), train_mode: true, dropout_seed, dropout_step: step }
    }

    pub fn is_train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<F>, requires_grad: bool, op: Op<F>) -> Tensor {
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Tensor(self.nodes.len() - 1)
    }

    /// Trainable input: receives a gradient after `backward`.
    pub fn leaf(&mut self, value: Array<F>) -> Tensor {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable input (targets, masks, positional tables).
    pub fn constant(&mut self, value: Array<F>) -> Tensor {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, t: Tensor) -> &Array<F> {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    pub fn grad(&self, t: Tensor) -> Option<&Array<F>> {
        self.grads[t.0].as_ref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn rg(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    // ---------------------------------------------------------------------
    // Forward ops
    // ---------------------------------------------------------------------

    /// Elementwise a + b; b may broadcast over a's leading axes.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.add_sub(a, b, false)
    }

    /// Elementwise a - b; b may broadcast over a's leading axes.
    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.add_sub(a, b, true)
    }

    fn add_sub(&mut self, a: Tensor, b: Tensor, sub: bool) -> Result<Tensor> {
        let op_name = if sub { "sub" } else { "add" };
        check_suffix(op_name, self.shape(a), self.shape(b))?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let nb = bv.numel();
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(nb) {
            for (o, &x) in chunk.iter_mut().zip(bv.data()) {
                if sub {
                    *o -= x;
                } else {
                    *o += x;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        let op = if sub { Op::Sub { a, b } } else { Op::Add { a, b } };
        Ok(self.push(out, rg, op))
    }

    /// Elementwise a * b; b may broadcast over a's leading axes.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        check_suffix("mul", self.shape(a), self.shape(b))?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let nb = bv.numel();
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(nb) {
            for (o, &x) in chunk.iter_mut().zip(bv.data()) {
                *o *= x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Mul { a, b }))
    }

    pub fn scalar_mul(&mut self, a: Tensor, c: F) -> Tensor {
        let out = self.nodes[a.0].value.map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, rg, Op::ScalarMul { a, c })
    }

    /// Matrix product. Supports [m,k]x[k,n], [B,m,k]x[k,n] and [B,m,k]x[B,k,n].
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape_err = || Error::Shape { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        let out = match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k) = (sa[0], sa[1]);
                let (k2, n) = (sb[0], sb[1]);
                if k != k2 {
                    return Err(shape_err());
                }
                let mut c = Array::zeros(&[m, n]);
                gemm_into(m, k, n, self.nodes[a.0].value.data(), false, self.nodes[b.0].value.data(), false, c.data_mut(), F::zero());
                c
            }
            (3, 2) => {
                let (bsz, m, k) = (sa[0], sa[1], sa[2]);
                let (k2, n) = (sb[0], sb[1]);
                if k != k2 {
                    return Err(shape_err());
                }
                let mut c = Array::zeros(&[bsz, m, n]);
                gemm_into(bsz * m, k, n, self.nodes[a.0].value.data(), false, self.nodes[b.0].value.data(), false, c.data_mut(), F::zero());
                c
            }
            (3, 3) => {
                let (bsz, m, k) = (sa[0], sa[1], sa[2]);
                let (b2, k2, n) = (sb[0], sb[1], sb[2]);
                if bsz != b2 || k != k2 {
                    return Err(shape_err());
                }
                let mut c = Array::zeros(&[bsz, m, n]);
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                c.data_mut()
                    .par_chunks_mut(m * n)
                    .zip(av.par_chunks(m * k))
                    .zip(bv.par_chunks(k * n))
                    .for_each(|((cb, ab), bb)| {
                        gemm_into(m, k, n, ab, false, bb, false, cb, F::zero());
                    });
                c
            }
            _ => return Err(shape_err()),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Matmul { a, b }))
    }

    /// x @ w + b convenience for dense layers.
    pub fn linear(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let out = self.nodes[a.0].value.map(|v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu { a })
    }

    pub fn abs(&mut self, a: Tensor) -> Tensor {
        let out = self.nodes[a.0].value.map(|v| v.abs());
        let rg = self.rg(a);
        self.push(out, rg, Op::Abs { a })
    }

    pub fn log(&mut self, a: Tensor) -> Tensor {
        let out = self.nodes[a.0].value.map(|v| v.ln());
        let rg = self.rg(a);
        self.push(out, rg, Op::Log { a })
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Tensor) -> Tensor {
        let av = &self.nodes[a.0].value;
        let d = av.last_dim();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            let inv = F::one() / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::Softmax { a })
    }

    /// Layer norm over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, a: Tensor, gain: Tensor, bias: Tensor) -> Result<Tensor> {
        let d = self.nodes[a.0].value.last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape { op: "layer_norm", lhs: self.shape(a).to_vec(), rhs: self.shape(gain).to_vec() });
        }
        let eps = F::from_f64(LAYER_NORM_EPS);
        let av = &self.nodes[a.0].value;
        let gv = self.nodes[gain.0].value.data().to_vec();
        let bv = self.nodes[bias.0].value.data().to_vec();
        let rows = av.n_rows();
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = av.clone();
        let inv_d = F::one() / F::from_f64(d as f64);
        for row in out.data_mut().chunks_mut(d) {
            let mu = row.iter().cloned().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() * inv_d;
            let r = F::one() / (var + eps).sqrt();
            mean.push(mu);
            rstd.push(r);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mu) * r * gv[j] + bv[j];
            }
        }
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, rg, Op::LayerNorm { a, gain, bias, mean, rstd }))
    }

    /// 1-D convolution along the time axis with "same" zero padding.
    ///
    /// x: [T, Cin] or [B, T, Cin]; w: [kernel*Cin, Cout]; b: [Cout].
    pub fn conv1d(&mut self, x: Tensor, w: Tensor, b: Tensor, kernel: usize) -> Result<Tensor> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() < 2 || sx.len() > 3 || sw.len() != 2 || kernel == 0 {
            return Err(Error::Shape { op: "conv1d", lhs: sx, rhs: sw });
        }
        let (bsz, t, cin) = if sx.len() == 3 { (sx[0], sx[1], sx[2]) } else { (1, sx[0], sx[1]) };
        let cout = sw[1];
        if sw[0] != kernel * cin || self.shape(b) != [cout] {
            return Err(Error::Shape { op: "conv1d", lhs: sx, rhs: sw });
        }
        let cols = im2col(self.nodes[x.0].value.data(), bsz, t, cin, kernel);
        let mut y = Array::zeros(&[bsz * t, cout]);
        gemm_into(bsz * t, kernel * cin, cout, &cols, false, self.nodes[w.0].value.data(), false, y.data_mut(), F::zero());
        let bv = self.nodes[b.0].value.data().to_vec();
        for row in y.data_mut().chunks_mut(cout) {
            for (v, &bb) in row.iter_mut().zip(&bv) {
                *v += bb;
            }
        }
        let out_shape = if sx.len() == 3 { vec![bsz, t, cout] } else { vec![t, cout] };
        let y = y.reshaped(out_shape);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(y, rg, Op::Conv1d { x, w, b, kernel }))
    }

    /// Row gather from an embedding table: ids index table rows.
    ///
    /// Output shape is `lead ++ [D]` where `lead` is the caller's id layout.
    pub fn embedding(&mut self, table: Tensor, ids: &[u32], lead: &[usize]) -> Result<Tensor> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::Shape { op: "embedding", lhs: st, rhs: lead.to_vec() });
        }
        let (vocab, d) = (st[0], st[1]);
        if lead.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape { op: "embedding", lhs: vec![ids.len()], rhs: lead.to_vec() });
        }
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            let i = id as usize;
            if i >= vocab {
                return Err(Error::domain(format!("embedding id {id} outside vocab of {vocab}")));
            }
            idx.push(i);
        }
        let tv = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in &idx {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let rg = self.rg(table);
        Ok(self.push(Array::new(shape, out), rg, Op::Embedding { table, ids: idx }))
    }

    /// Train-mode dropout with a counter-based mask; identity in eval mode.
    pub fn dropout(&mut self, a: Tensor, rate: f64, layer_id: u64) -> Tensor {
        if !self.train_mode || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let scale = F::from_f64(1.0 / keep);
        let av = &self.nodes[a.0].value;
        let mut mask = Vec::with_capacity(av.numel());
        for i in 0..av.numel() {
            let u = counter_uniform(self.dropout_seed, self.dropout_step, layer_id, i as u64);
            mask.push(if u < keep { scale } else { F::zero() });
        }
        let mut out = av.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::Dropout { a, mask })
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.is_empty() {
            return Err(Error::Shape { op: "concat", lhs: first, rhs: vec![] });
        }
        let lead = &first[..first.len() - 1];
        let mut total_d = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::Shape { op: "concat", lhs: first.clone(), rhs: s.to_vec() });
            }
            total_d += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total_d);
        for r in 0..rows {
            for &p in parts {
                let v = &self.nodes[p.0].value;
                let d = v.last_dim();
                out.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total_d);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Array::new(shape, out), rg, Op::Concat { parts: parts.to_vec() }))
    }

    /// Slice [start, end) of the last axis.
    pub fn slice_last(&mut self, a: Tensor, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape(a).to_vec();
        let d = *s.last().ok_or(Error::Shape { op: "slice", lhs: s.clone(), rhs: vec![start, end] })?;
        if start >= end || end > d {
            return Err(Error::Shape { op: "slice", lhs: s, rhs: vec![start, end] });
        }
        let av = &self.nodes[a.0].value;
        let width = end - start;
        let mut out = Vec::with_capacity(av.n_rows() * width);
        for row in av.data().chunks(d) {
            out.extend_from_slice(&row[start..end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = width;
        let rg = self.rg(a);
        Ok(self.push(Array::new(shape, out), rg, Op::SliceLast { a, start }))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape { op: "transpose", lhs: s, rhs: vec![] });
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let av = &self.nodes[a.0].value;
        let mut out = vec![F::zero(); av.numel()];
        for (ob, ib) in out.chunks_mut(m * n).zip(av.data().chunks(m * n)) {
            for i in 0..m {
                for j in 0..n {
                    ob[j * m + i] = ib[i * n + j];
                }
            }
        }
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.rg(a);
        Ok(self.push(Array::new(shape, out), rg, Op::Transpose { a }))
    }

    /// Per-batch row gather: x [B, N, D], idx flat [B*T] of row indices in
    /// [0, N) -> [B, T, D]. With 2-d x ([N, D]), idx is [T] -> [T, D].
    /// This is the length regulator's primitive.
    pub fn gather_rows(&mut self, x: Tensor, idx: &[usize], t_len: usize) -> Result<Tensor> {
        let s = self.shape(x).to_vec();
        let (bsz, n, d) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Error::Shape { op: "gather_rows", lhs: s, rhs: vec![idx.len()] }),
        };
        if idx.len() != bsz * t_len {
            return Err(Error::Shape { op: "gather_rows", lhs: vec![bsz, t_len], rhs: vec![idx.len()] });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::contract(format!("gather index {bad} outside {n} rows")));
        }
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for b in 0..bsz {
            for t in 0..t_len {
                let r = idx[b * t_len + t];
                let off = (b * n + r) * d;
                out.extend_from_slice(&xv[off..off + d]);
            }
        }
        let shape = if s.len() == 3 { vec![bsz, t_len, d] } else { vec![t_len, d] };
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out), rg, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Mean over all entries -> scalar.
    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let av = &self.nodes[a.0].value;
        let m = av.data().iter().cloned().sum::<F>() / F::from_f64(av.numel() as f64);
        let rg = self.rg(a);
        self.push(Array::scalar(m), rg, Op::Mean { a })
    }

    /// Sum over all entries -> scalar.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let av = &self.nodes[a.0].value;
        let s = av.data().iter().cloned().sum::<F>();
        let rg = self.rg(a);
        self.push(Array::scalar(s), rg, Op::Sum { a })
    }

    /// Gradient reversal: bitwise identity forward, negated gradient backward.
    pub fn grl(&mut self, a: Tensor) -> Tensor {
        let out = self.nodes[a.0].value.clone();
        let rg = self.rg(a);
        self.push(out, rg, Op::Grl { a })
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        let av = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != av.numel() {
            return Err(Error::Shape { op: "reshape", lhs: av.shape().to_vec(), rhs: shape.to_vec() });
        }
        let out = av.clone().reshaped(shape.to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Reshape { a }))
    }

    // ---------------------------------------------------------------------
    // Backward
    // ---------------------------------------------------------------------

    /// Populates gradients of every `requires_grad` node reachable from
    /// `loss`. Fan-out accumulates; intermediate gradients are freed as the
    /// sweep passes them, leaf gradients are kept.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.rg(loss) {
            return Err(Error::contract("loss does not depend on any trainable leaf"));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.grads[loss.0] = Some(Array::filled(&shape, F::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                self.grads[i] = None;
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            self.dispatch_backward(i, &gy);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(gy);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, t: Tensor, add: impl FnOnce(&mut Array<F>)) {
        if !self.nodes[t.0].requires_grad {
            return;
        }
        if self.grads[t.0].is_none() {
            self.grads[t.0] = Some(Array::zeros(self.nodes[t.0].value.shape()));
        }
        add(self.grads[t.0].as_mut().unwrap());
    }

    fn dispatch_backward(&mut self, i: usize, gy: &Array<F>) {
        // The match can't borrow self.nodes[i].op across the mutable
        // accumulate calls, so each arm copies what it needs first.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add { a, b } => {
                self.accumulate(a, |g| axpy(g.data_mut(), gy.data(), F::one()));
                self.accumulate(b, |g| reduce_leading(g.data_mut(), gy.data(), F::one()));
            }
            &Op::Sub { a, b } => {
                self.accumulate(a, |g| axpy(g.data_mut(), gy.data(), F::one()));
                self.accumulate(b, |g| reduce_leading(g.data_mut(), gy.data(), -F::one()));
            }
            &Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let nb = bv.numel();
                self.accumulate(a, |g| {
                    for (chunk_g, chunk_y) in g.data_mut().chunks_mut(nb).zip(gy.data().chunks(nb)) {
                        for ((gg, &y), &b) in chunk_g.iter_mut().zip(chunk_y).zip(bv.data()) {
                            *gg += y * b;
                        }
                    }
                });
                self.accumulate(b, |g| {
                    let gd = g.data_mut();
                    for (chunk_y, chunk_a) in gy.data().chunks(nb).zip(av.data().chunks(nb)) {
                        for (j, (&y, &a)) in chunk_y.iter().zip(chunk_a).enumerate() {
                            gd[j] += y * a;
                        }
                    }
                });
            }
            &Op::ScalarMul { a, c } => {
                self.accumulate(a, |g| axpy(g.data_mut(), gy.data(), c));
            }
            &Op::Matmul { a, b } => self.backward_matmul(a, b, gy),
            &Op::Relu { a } => {
                let av = self.nodes[a.0].value.clone();
                self.accumulate(a, |g| {
                    for ((gg, &y), &x) in g.data_mut().iter_mut().zip(gy.data()).zip(av.data()) {
                        if x > F::zero() {
                            *gg += y;
                        }
                    }
                });
            }
            &Op::Abs { a } => {
                let av = self.nodes[a.0].value.clone();
                self.accumulate(a, |g| {
                    for ((gg, &y), &x) in g.data_mut().iter_mut().zip(gy.data()).zip(av.data()) {
                        if x > F::zero() {
                            *gg += y;
                        } else if x < F::zero() {
                            *gg -= y;
                        }
                    }
                });
            }
            &Op::Log { a } => {
                let av = self.nodes[a.0].value.clone();
                self.accumulate(a, |g| {
                    for ((gg, &y), &x) in g.data_mut().iter_mut().zip(gy.data()).zip(av.data()) {
                        *gg += y / x;
                    }
                });
            }
            &Op::Softmax { a } => {
                let yv = self.nodes[i].value.clone();
                let d = yv.last_dim();
                self.accumulate(a, |g| {
                    for ((gr, yr), dr) in g.data_mut().chunks_mut(d).zip(yv.data().chunks(d)).zip(gy.data().chunks(d)) {
                        let dot = dr.iter().zip(yr).map(|(&q, &y)| q * y).sum::<F>();
                        for ((gg, &y), &q) in gr.iter_mut().zip(yr).zip(dr) {
                            *gg += y * (q - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, gain, bias, mean, rstd } => {
                let (a, gain, bias) = (*a, *gain, *bias);
                let mean = mean.clone();
                let rstd = rstd.clone();
                self.backward_layer_norm(a, gain, bias, &mean, &rstd, gy);
            }
            &Op::Conv1d { x, w, b, kernel } => self.backward_conv1d(x, w, b, kernel, gy),
            Op::Embedding { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let d = self.nodes[table.0].value.last_dim();
                self.accumulate(table, |g| {
                    let gd = g.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gy.data()[r * d..(r + 1) * d];
                        for (gg, &y) in gd[id * d..(id + 1) * d].iter_mut().zip(src) {
                            *gg += y;
                        }
                    }
                });
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                let mask = mask.clone();
                self.accumulate(a, |g| {
                    for ((gg, &y), &m) in g.data_mut().iter_mut().zip(gy.data()).zip(&mask) {
                        *gg += y * m;
                    }
                });
            }
            Op::Concat { parts } => {
                let parts = parts.clone();
                let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p.0].value.last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = gy.numel() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let off = offset;
                    self.accumulate(p, |g| {
                        for r in 0..rows {
                            let src = &gy.data()[r * total + off..r * total + off + w];
                            for (gg, &y) in g.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *gg += y;
                            }
                        }
                    });
                    offset += w;
                }
            }
            &Op::SliceLast { a, start } => {
                let d = self.nodes[a.0].value.last_dim();
                let w = gy.last_dim();
                let rows = gy.numel() / w;
                self.accumulate(a, |g| {
                    for r in 0..rows {
                        let src = &gy.data()[r * w..(r + 1) * w];
                        for (gg, &y) in g.data_mut()[r * d + start..r * d + start + w].iter_mut().zip(src) {
                            *gg += y;
                        }
                    }
                });
            }
            &Op::Transpose { a } => {
                let s = gy.shape().to_vec();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                self.accumulate(a, |g| {
                    for (gb, yb) in g.data_mut().chunks_mut(m * n).zip(gy.data().chunks(m * n)) {
                        for i2 in 0..m {
                            for j in 0..n {
                                gb[j * m + i2] += yb[i2 * n + j];
                            }
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let x = *x;
                let idx = idx.clone();
                let sx = self.nodes[x.0].value.shape().to_vec();
                let (bsz, n, d) = if sx.len() == 3 { (sx[0], sx[1], sx[2]) } else { (1, sx[0], sx[1]) };
                let t_len = idx.len() / bsz;
                self.accumulate(x, |g| {
                    let gd = g.data_mut();
                    for b in 0..bsz {
                        for t in 0..t_len {
                            let r = idx[b * t_len + t];
                            let dst = (b * n + r) * d;
                            let src = &gy.data()[(b * t_len + t) * d..(b * t_len + t + 1) * d];
                            for (gg, &y) in gd[dst..dst + d].iter_mut().zip(src) {
                                *gg += y;
                            }
                        }
                    }
                });
            }
            &Op::Mean { a } => {
                let n = self.nodes[a.0].value.numel();
                let v = gy.item() / F::from_f64(n as f64);
                self.accumulate(a, |g| {
                    for gg in g.data_mut() {
                        *gg += v;
                    }
                });
            }
            &Op::Sum { a } => {
                let v = gy.item();
                self.accumulate(a, |g| {
                    for gg in g.data_mut() {
                        *gg += v;
                    }
                });
            }
            &Op::Grl { a } => {
                self.accumulate(a, |g| axpy(g.data_mut(), gy.data(), -F::one()));
            }
            &Op::Reshape { a } => {
                self.accumulate(a, |g| axpy(g.data_mut(), gy.data(), F::one()));
            }
        }
    }

    fn backward_matmul(&mut self, a: Tensor, b: Tensor, gy: &Array<F>) {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k) = (sa[0], sa[1]);
                let n = sb[1];
                self.accumulate(a, |g| gemm_into(m, n, k, gy.data(), false, bv.data(), true, g.data_mut(), F::one()));
                self.accumulate(b, |g| gemm_into(k, m, n, av.data(), true, gy.data(), false, g.data_mut(), F::one()));
            }
            (3, 2) => {
                let (bsz, _m, k) = (sa[0], sa[1], sa[2]);
                let n = sb[1];
                let rows = bsz * sa[1];
                self.accumulate(a, |g| gemm_into(rows, n, k, gy.data(), false, bv.data(), true, g.data_mut(), F::one()));
                self.accumulate(b, |g| gemm_into(k, rows, n, av.data(), true, gy.data(), false, g.data_mut(), F::one()));
            }
            (3, 3) => {
                let (bsz, m, k) = (sa[0], sa[1], sa[2]);
                let n = sb[2];
                self.accumulate(a, |g| {
                    g.data_mut()
                        .par_chunks_mut(m * k)
                        .zip(gy.data().par_chunks(m * n))
                        .zip(bv.data().par_chunks(k * n))
                        .for_each(|((ga, gyb), bb)| gemm_into(m, n, k, gyb, false, bb, true, ga, F::one()));
                });
                self.accumulate(b, |g| {
                    g.data_mut()
                        .par_chunks_mut(k * n)
                        .zip(av.data().par_chunks(m * k))
                        .zip(gy.data().par_chunks(m * n))
                        .for_each(|((gb, ab), gyb)| gemm_into(k, m, n, ab, true, gyb, false, gb, F::one()));
                });
            }
            _ => unreachable!("matmul forward validated shapes"),
        }
    }

    fn backward_layer_norm(
        &mut self,
        a: Tensor,
        gain: Tensor,
        bias: Tensor,
        mean: &[F],
        rstd: &[F],
        gy: &Array<F>,
    ) {
        let av = self.nodes[a.0].value.clone();
        let gv = self.nodes[gain.0].value.clone();
        let d = av.last_dim();
        let inv_d = F::one() / F::from_f64(d as f64);
        self.accumulate(a, |g| {
            for (r, (gr, (xr, yr))) in g
                .data_mut()
                .chunks_mut(d)
                .zip(av.data().chunks(d).zip(gy.data().chunks(d)))
                .enumerate()
            {
                let (mu, rs) = (mean[r], rstd[r]);
                let mut s1 = F::zero();
                let mut s2 = F::zero();
                for j in 0..d {
                    let dxhat = yr[j] * gv.data()[j];
                    let xhat = (xr[j] - mu) * rs;
                    s1 += dxhat;
                    s2 += dxhat * xhat;
                }
                s1 *= inv_d;
                s2 *= inv_d;
                for j in 0..d {
                    let dxhat = yr[j] * gv.data()[j];
                    let xhat = (xr[j] - mu) * rs;
                    gr[j] += rs * (dxhat - s1 - xhat * s2);
                }
            }
        });
        self.accumulate(gain, |g| {
            let gd = g.data_mut();
            for (r, (xr, yr)) in av.data().chunks(d).zip(gy.data().chunks(d)).enumerate() {
                let (mu, rs) = (mean[r], rstd[r]);
                for j in 0..d {
                    gd[j] += yr[j] * (xr[j] - mu) * rs;
                }
            }
        });
        self.accumulate(bias, |g| {
            let gd = g.data_mut();
            for yr in gy.data().chunks(d) {
                for j in 0..d {
                    gd[j] += yr[j];
                }
            }
        });
    }

    fn backward_conv1d(&mut self, x: Tensor, w: Tensor, b: Tensor, kernel: usize, gy: &Array<F>) {
        let sx = self.nodes[x.0].value.shape().to_vec();
        let (bsz, t, cin) = if sx.len() == 3 { (sx[0], sx[1], sx[2]) } else { (1, sx[0], sx[1]) };
        let cout = self.nodes[w.0].value.last_dim();
        let xv = self.nodes[x.0].value.clone();
        let wv = self.nodes[w.0].value.clone();
        self.accumulate(b, |g| {
            let gd = g.data_mut();
            for row in gy.data().chunks(cout) {
                for (gg, &y) in gd.iter_mut().zip(row) {
                    *gg += y;
                }
            }
        });
        self.accumulate(w, |g| {
            let cols = im2col(xv.data(), bsz, t, cin, kernel);
            gemm_into(kernel * cin, bsz * t, cout, &cols, true, gy.data(), false, g.data_mut(), F::one());
        });
        self.accumulate(x, |g| {
            let mut dcols = vec![F::zero(); bsz * t * kernel * cin];
            gemm_into(bsz * t, cout, kernel * cin, gy.data(), false, wv.data(), true, &mut dcols, F::zero());
            let pad = (kernel - 1) / 2;
            let gd = g.data_mut();
            for bb in 0..bsz {
                for tt in 0..t {
                    let crow = &dcols[(bb * t + tt) * kernel * cin..(bb * t + tt + 1) * kernel * cin];
                    for kk in 0..kernel {
                        let src_t = tt as isize + kk as isize - pad as isize;
                        if src_t < 0 || src_t >= t as isize {
                            continue;
                        }
                        let dst = (bb * t + src_t as usize) * cin;
                        for (gg, &y) in gd[dst..dst + cin].iter_mut().zip(&crow[kk * cin..(kk + 1) * cin]) {
                            *gg += y;
                        }
                    }
                }
            }
        });
    }
}

/// g += alpha * y, elementwise.
fn axpy<F: Real>(g: &mut [F], y: &[F], alpha: F) {
    for (gg, &v) in g.iter_mut().zip(y) {
        *gg += alpha * v;
    }
}

/// g(suffix shape) += alpha * sum of y over its leading axes.
fn reduce_leading<F: Real>(g: &mut [F], y: &[F], alpha: F) {
    let nb = g.len();
    for chunk in y.chunks(nb) {
        for (gg, &v) in g.iter_mut().zip(chunk) {
            *gg += alpha * v;
        }
    }
}

fn check_suffix(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() <= a.len() && &a[a.len() - b.len()..] == b {
        Ok(())
    } else {
        Err(Error::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() })
    }
}

/// Unfolds [B, T, Cin] into [B*T, K*Cin] with "same" zero padding.
fn im2col<F: Real>(x: &[F], bsz: usize, t: usize, cin: usize, kernel: usize) -> Vec<F> {
    let pad = (kernel - 1) / 2;
    let mut cols = vec![F::zero(); bsz * t * kernel * cin];
    for b in 0..bsz {
        for tt in 0..t {
            let dst_base = (b * t + tt) * kernel * cin;
            for kk in 0..kernel {
                let src_t = tt as isize + kk as isize - pad as isize;
                if src_t < 0 || src_t >= t as isize {
                    continue;
                }
                let src = (b * t + src_t as usize) * cin;
                cols[dst_base + kk * cin..dst_base + (kk + 1) * cin].copy_from_slice(&x[src..src + cin]);
            }
        }
    }
    cols
}
