//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] is built once per forward pass. Parameters enter as leaves that
//! carry a parameter index; frozen parameters enter with `trainable = false` and
//! receive no gradient, though gradients still flow *through* the ops that use
//! them. [`Graph::backward`] returns gradients keyed by parameter index.

use std::sync::Arc;

use crate::tensor::{dot, matmul, sigmoid, Mat, Scalar, Trans};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Attention connectivity over a flat `[N, E]` activation matrix.
///
/// Every position belongs to exactly one contiguous segment; attention never
/// crosses segments. With `causal`, position `i` of a segment sees positions
/// `0..=i` of the same segment only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnLayout {
    pub segments: Vec<(usize, usize)>,
    pub causal: bool,
}

impl AttnLayout {
    pub fn single(len: usize, causal: bool) -> Self {
        Self {
            segments: if len == 0 { vec![] } else { vec![(0, len)] },
            causal,
        }
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map(|&(s, l)| s + l).unwrap_or(0)
    }

    /// Whether query position `i` may attend to key position `j` (flat indices).
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.segments.iter().any(|&(s, l)| {
            let inside = |p: usize| p >= s && p < s + l;
            inside(i) && inside(j) && (!self.causal || j <= i)
        })
    }

    pub fn is_well_formed(&self) -> bool {
        let mut next = 0;
        for &(s, l) in &self.segments {
            if s != next || l == 0 {
                return false;
            }
            next = s + l;
        }
        true
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul { a: Var, b: Var, tb: Trans },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Silu(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    Interleave { parts: Vec<Var>, index: Vec<(usize, usize)> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: Arc<AttnLayout>,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy { logits: Var, targets: Vec<(usize, usize)>, probs: Vec<T> },
    SumSquares(Var),
    Sum(Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Mat<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Mat::zeros(0, 0))
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn input(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn param(&mut self, pid: usize, m: Mat<T>, trainable: bool) -> Var {
        self.push(m, Op::Param(pid), trainable)
    }

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), Trans::No, self.value(b), Trans::No);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul { a, b, tb: Trans::No }, ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), Trans::No, self.value(b), Trans::Yes);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul { a, b, tb: Trans::Yes }, ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Mat<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "elementwise shape mismatch");
        Mat::from_vec(
            x.rows,
            x.cols,
            x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × n` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows, 1, "add_row expects a row vector");
        assert_eq!(xv.cols, rv.cols, "add_row width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *o = *o + *b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.value(x);
        let out = Mat::from_vec(xv.rows, xv.cols, xv.data.iter().map(|&v| v * s).collect());
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Mat::from_vec(
            xv.rows,
            xv.cols,
            xv.data.iter().map(|&v| v * sigmoid(v)).collect(),
        );
        let ng = self.ng(x);
        self.push(out, Op::Silu(x), ng)
    }

    /// Row-wise RMS normalization with a learned `1 × n` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Var {
        let (xv, gv) = (self.value(x), self.value(gain));
        assert_eq!(gv.rows, 1);
        assert_eq!(xv.cols, gv.cols, "rms_norm width mismatch");
        let n = T::lift(xv.cols as f64);
        let eps = T::lift(eps);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        let mut inv_rms = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let ms = dot(row, row) / n;
            let inv = T::one() / (ms + eps).sqrt();
            inv_rms.push(inv);
            for ((o, &v), &g) in out.row_mut(r).iter_mut().zip(row).zip(&gv.data) {
                *o = v * inv * g;
            }
        }
        let ng = self.ng(x) || self.ng(gain);
        self.push(out, Op::RmsNorm { x, gain, inv_rms }, ng)
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(ids.len(), tv.cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < tv.rows, "gather id {id} out of range {}", tv.rows);
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        self.push(out, Op::Gather { table, ids }, ng)
    }

    /// Builds a matrix whose row `i` is row `index[i].1` of `parts[index[i].0]`.
    pub fn interleave(&mut self, parts: Vec<Var>, index: Vec<(usize, usize)>) -> Var {
        assert!(!parts.is_empty() || index.is_empty());
        let cols = parts.first().map(|&p| self.value(p).cols).unwrap_or(0);
        for &p in &parts {
            assert_eq!(self.value(p).cols, cols, "interleave width mismatch");
        }
        let mut out = Mat::zeros(index.len(), cols);
        for (i, &(p, r)) in index.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.value(parts[p]).row(r));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Interleave { parts, index }, ng)
    }

    /// Multi-head scaled dot-product attention restricted by `layout`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: Arc<AttnLayout>, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, e) = (qv.rows, qv.cols);
        assert_eq!((kv.rows, kv.cols), (n, e));
        assert_eq!((vv.rows, vv.cols), (n, e));
        assert_eq!(layout.total_len(), n, "attention layout does not cover the input");
        assert_eq!(e % heads, 0);
        let dh = e / heads;
        let scale = T::lift(1.0 / (dh as f64).sqrt());
        let total: usize = layout.segments.iter().map(|&(_, l)| heads * l * l).sum();
        let mut probs = vec![T::zero(); total];
        let mut out = Mat::zeros(n, e);
        let mut off = 0;
        for &(s, len) in &layout.segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let block = &mut probs[off..off + len * len];
                for i in 0..len {
                    let qi = &qv.row(s + i)[cols.clone()];
                    let jmax = if layout.causal { i + 1 } else { len };
                    let row = &mut block[i * len..i * len + jmax];
                    let mut mx = T::neg_infinity();
                    for (j, p) in row.iter_mut().enumerate() {
                        let sc = dot(qi, &kv.row(s + j)[cols.clone()]) * scale;
                        *p = sc;
                        mx = mx.max(sc);
                    }
                    let mut sum = T::zero();
                    for p in row.iter_mut() {
                        *p = (*p - mx).exp();
                        sum = sum + *p;
                    }
                    let inv = T::one() / sum;
                    for p in row.iter_mut() {
                        *p = *p * inv;
                    }
                    let o = &mut out.row_mut(s + i)[cols.clone()];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &vv.row(s + j)[cols.clone()];
                        for (od, &vd) in o.iter_mut().zip(vj) {
                            *od = *od + p * vd;
                        }
                    }
                }
                off += len * len;
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Attention probabilities of an attention node, per segment then per head,
    /// each block `len × len` row-major (entries above the diagonal are zero when causal).
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Summed negative log-likelihood of `targets = [(row, class)]` under
    /// row-wise softmax of `logits`. Produces a `1 × 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Var {
        let lv = self.value(logits);
        let c = lv.cols;
        let mut probs = vec![T::zero(); targets.len() * c];
        let mut total = T::zero();
        for (t, &(r, class)) in targets.iter().enumerate() {
            assert!(class < c, "target class {class} out of range {c}");
            let row = lv.row(r);
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let p = &mut probs[t * c..(t + 1) * c];
            let mut sum = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - mx).exp();
                sum = sum + *pi;
            }
            let inv = T::one() / sum;
            for pi in p.iter_mut() {
                *pi = *pi * inv;
            }
            total = total + (mx + sum.ln() - row[class]);
        }
        let ng = self.ng(logits);
        self.push(
            Mat::from_vec(1, 1, vec![total]),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            ng,
        )
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let ng = self.ng(x);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumSquares(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data.iter().copied().sum();
        let ng = self.ng(x);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(x), ng)
    }

    /// Reverse pass from a `1 × 1` node. Returns `(parameter index, gradient)`
    /// for every trainable parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Vec<(usize, Mat<T>)> {
        let lv = self.value(loss);
        assert_eq!((lv.rows, lv.cols), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.ng(loss) {
            return Vec::new();
        }
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![T::one()]));
        let mut out = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        out.reverse();
        out
    }

    fn accumulate(&self, grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn zero_like(&self, v: Var) -> Mat<T> {
        let m = self.value(v);
        Mat::zeros(m.rows, m.cols)
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Mat<T>,
        grads: &mut [Option<Mat<T>>],
        out: &mut Vec<(usize, Mat<T>)>,
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(pid) => out.push((*pid, g)),
            Op::MatMul { a, b, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // dA = dC · op(B)ᵀ
                    let flip = if *tb == Trans::No { Trans::Yes } else { Trans::No };
                    self.accumulate(grads, *a, matmul(&g, Trans::No, bv, flip));
                }
                if self.ng(*b) {
                    let gb = match tb {
                        Trans::No => matmul(av, Trans::Yes, &g, Trans::No),
                        Trans::Yes => matmul(&g, Trans::Yes, av, Trans::No),
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) && self.ng(*b) {
                    self.accumulate(grads, *a, g.clone());
                    self.accumulate(grads, *b, g);
                } else if self.ng(*a) {
                    self.accumulate(grads, *a, g);
                } else {
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*b) {
                    let neg = Mat::from_vec(g.rows, g.cols, g.data.iter().map(|&v| -v).collect());
                    self.accumulate(grads, *b, neg);
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let ga = g.data.iter().zip(&bv.data).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Mat::from_vec(g.rows, g.cols, ga));
                }
                if self.ng(*b) {
                    let gb = g.data.iter().zip(&av.data).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Mat::from_vec(g.rows, g.cols, gb));
                }
            }
            Op::AddRow(x, row) => {
                if self.ng(*row) {
                    let mut gr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (a, &b) in gr.data.iter_mut().zip(g.row(r)) {
                            *a = *a + b;
                        }
                    }
                    self.accumulate(grads, *row, gr);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Scale(x, s) => {
                let gx = g.data.iter().map(|&v| v * *s).collect();
                self.accumulate(grads, *x, Mat::from_vec(g.rows, g.cols, gx));
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let gx = g
                    .data
                    .iter()
                    .zip(&xv.data)
                    .map(|(&gv, &v)| {
                        let s = sigmoid(v);
                        gv * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *x, Mat::from_vec(g.rows, g.cols, gx));
            }
            #[allow(clippy::needless_range_loop)]
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let n = T::lift(xv.cols as f64);
                if self.ng(*gain) {
                    let mut gg = Mat::zeros(1, xv.cols);
                    for r in 0..xv.rows {
                        let inv = inv_rms[r];
                        for ((a, &dy), &v) in gg.data.iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                            *a = *a + dy * v * inv;
                        }
                    }
                    self.accumulate(grads, *gain, gg);
                }
                if self.ng(*x) {
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let inv = inv_rms[r];
                        let row = xv.row(r);
                        let dy = g.row(r);
                        let mut proj = T::zero();
                        for ((&d, &gn), &v) in dy.iter().zip(&gv.data).zip(row) {
                            proj = proj + d * gn * v;
                        }
                        let coef = proj * inv * inv * inv / n;
                        for (((o, &d), &gn), &v) in gx.row_mut(r).iter_mut().zip(dy).zip(&gv.data).zip(row) {
                            *o = d * gn * inv - v * coef;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Gather { table, ids } => {
                let mut gt = self.zero_like(*table);
                for (i, &id) in ids.iter().enumerate() {
                    for (a, &b) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *a = *a + b;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Interleave { parts, index } => {
                let mut pg: Vec<Option<Mat<T>>> = parts
                    .iter()
                    .map(|&p| if self.ng(p) { Some(self.zero_like(p)) } else { None })
                    .collect();
                for (i, &(p, r)) in index.iter().enumerate() {
                    if let Some(m) = &mut pg[p] {
                        for (a, &b) in m.row_mut(r).iter_mut().zip(g.row(i)) {
                            *a = *a + b;
                        }
                    }
                }
                for (p, m) in parts.iter().zip(pg) {
                    if let Some(m) = m {
                        self.accumulate(grads, *p, m);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, e) = (qv.rows, qv.cols);
                let dh = e / heads;
                let scale = T::lift(1.0 / (dh as f64).sqrt());
                let mut gq = Mat::zeros(n, e);
                let mut gk = Mat::zeros(n, e);
                let mut gvv = Mat::zeros(n, e);
                let mut off = 0;
                let mut dp = Vec::new();
                for &(s, len) in &layout.segments {
                    for h in 0..*heads {
                        let cols = h * dh..(h + 1) * dh;
                        let block = &probs[off..off + len * len];
                        for i in 0..len {
                            let jmax = if layout.causal { i + 1 } else { len };
                            let p = &block[i * len..i * len + jmax];
                            let go = &g.row(s + i)[cols.clone()];
                            dp.clear();
                            let mut pd = T::zero();
                            for (j, &pj) in p.iter().enumerate() {
                                let d = dot(go, &vv.row(s + j)[cols.clone()]);
                                dp.push(d);
                                pd = pd + pj * d;
                            }
                            for (j, &pj) in p.iter().enumerate() {
                                let ds = pj * (dp[j] - pd) * scale;
                                {
                                    let kj = &kv.row(s + j)[cols.clone()];
                                    let gqi = &mut gq.row_mut(s + i)[cols.clone()];
                                    for (a, &b) in gqi.iter_mut().zip(kj) {
                                        *a = *a + ds * b;
                                    }
                                }
                                {
                                    let qi = &qv.row(s + i)[cols.clone()];
                                    let gkj = &mut gk.row_mut(s + j)[cols.clone()];
                                    for (a, &b) in gkj.iter_mut().zip(qi) {
                                        *a = *a + ds * b;
                                    }
                                }
                                let gvj = &mut gvv.row_mut(s + j)[cols.clone()];
                                for (a, &b) in gvj.iter_mut().zip(go) {
                                    *a = *a + pj * b;
                                }
                            }
                        }
                        off += len * len;
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gvv);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let gs = g.data[0];
                let mut gl = self.zero_like(*logits);
                let c = gl.cols;
                for (t, &(r, class)) in targets.iter().enumerate() {
                    let p = &probs[t * c..(t + 1) * c];
                    let row = gl.row_mut(r);
                    for (a, &pi) in row.iter_mut().zip(p) {
                        *a = *a + pi * gs;
                    }
                    row[class] = row[class] - gs;
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::SumSquares(x) => {
                let gs = g.data[0] + g.data[0];
                let xv = self.value(*x);
                let gx = xv.data.iter().map(|&v| v * gs).collect();
                self.accumulate(grads, *x, Mat::from_vec(xv.rows, xv.cols, gx));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let gx = vec![g.data[0]; xv.len()];
                self.accumulate(grads, *x, Mat::from_vec(xv.rows, xv.cols, gx));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks the analytic gradient of every parameter leaf produced by `build`
    /// against central differences.
    fn check(params: Vec<Mat<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let eval = |ps: &[Mat<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, m)| g.param(i, m.clone(), true)).collect();
            let l = build(&mut g, &vars);
            g.value(l).data[0]
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, m)| g.param(i, m.clone(), true)).collect();
        let l = build(&mut g, &vars);
        let grads = g.backward(l);
        let h = 1e-5;
        for (pid, grad) in grads {
            for e in 0..params[pid].len() {
                let mut plus = params.clone();
                plus[pid].data[e] += h;
                let mut minus = params.clone();
                minus[pid].data[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = grad.data[e];
                let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-6, "param {pid} elem {e}: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_and_elementwise_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = vec![rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 4, 2), rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 1, 2)];
        check(ps, |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let s = g.silu(ab);
            let m = g.mul(s, v[2]);
            let d = g.sub(m, v[2]);
            let r = g.add_row(d, v[3]);
            let sc = g.scale(r, 0.7);
            g.sum_squares(sc)
        });
    }

    #[test]
    fn matmul_nt_and_norm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = vec![rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 5, 4), rand_mat(&mut rng, 1, 4)];
        check(ps, |g, v| {
            let n = g.rms_norm(v[0], v[2], 1e-5);
            let l = g.matmul_nt(n, v[1]);
            g.cross_entropy(l, vec![(0, 1), (2, 4), (2, 0)])
        });
    }

    #[test]
    fn gather_and_interleave_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 2, 3)];
        check(ps, |g, v| {
            let e = g.gather(v[0], vec![3, 1, 3]);
            let x = g.interleave(vec![e, v[1]], vec![(0, 0), (1, 1), (0, 2), (0, 1), (1, 0)]);
            let a = g.add(x, x);
            let s = g.silu(a);
            g.sum(s)
        });
    }

    #[test]
    fn attention_grads_causal_and_bidirectional() {
        for causal in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let ps = vec![rand_mat(&mut rng, 5, 4), rand_mat(&mut rng, 5, 4), rand_mat(&mut rng, 5, 4), rand_mat(&mut rng, 5, 4)];
            let layout = Arc::new(AttnLayout {
                segments: vec![(0, 3), (3, 2)],
                causal,
            });
            check(ps, move |g, v| {
                let o = g.attention(v[0], v[1], v[2], layout.clone(), 2);
                let m = g.mul(o, v[3]);
                g.sum(m)
            });
        }
    }

    #[test]
    fn frozen_params_pass_gradient_through() {
        let mut g = Graph::new();
        let w = g.param(0, Mat::from_vec(1, 1, vec![3.0f64]), false);
        let x = g.param(1, Mat::from_vec(1, 1, vec![2.0f64]), true);
        let y = g.matmul(x, w);
        let l = g.sum(y);
        let grads = g.backward(l);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, 1);
        assert_eq!(grads[0].1.data, vec![3.0]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let q = g.input(rand_mat(&mut rng, 6, 4).cast::<f32>());
        let k = g.input(rand_mat(&mut rng, 6, 4).cast::<f32>());
        let layout = Arc::new(AttnLayout {
            segments: vec![(0, 4), (4, 2)],
            causal: true,
        });
        let o = g.attention(q, k, q, layout.clone(), 2);
        let probs = g.attention_probs(o).unwrap();
        let mut off = 0;
        for &(_, len) in &layout.segments {
            for _ in 0..2 {
                for i in 0..len {
                    let s: f32 = probs[off + i * len..off + (i + 1) * len].iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
                off += len * len;
            }
        }
    }

    #[test]
    fn layout_allowed_matches_definition() {
        let l = AttnLayout {
            segments: vec![(0, 2), (2, 3)],
            causal: true,
        };
        assert!(l.is_well_formed());
        assert!(l.allowed(1, 0));
        assert!(!l.allowed(0, 1));
        assert!(!l.allowed(2, 1));
        assert!(l.allowed(4, 2));
    }
}
