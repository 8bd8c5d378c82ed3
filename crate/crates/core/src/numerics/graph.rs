//! Tape-based reverse-mode differentiation over matrix operations.
//!
//! A [`Graph`] records one forward computation against a borrowed
//! [`ParamStore`]. Nodes that cannot reach a trainable parameter are marked as
//! not needing gradients and are skipped entirely in [`Graph::backward`], so a
//! frozen backbone only pays for activation gradients where something
//! upstream of it is being trained.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{
    self, attend_row, gelu, gelu_grad, layer_norm_row, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid,
    PrefixRows,
};
use super::param::{Gradients, ParamId, ParamStore};
use super::real::{r, Real};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

/// Layout of a multi-head attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub causal: bool,
}

/// Learned key/value rows attended before the real sequence.
#[derive(Debug, Clone, Copy)]
pub struct PrefixInput<T> {
    pub keys: Var,
    pub values: Var,
    /// One-element gate; the prefix logit bias is `gate_scale · gate`.
    pub gate: Var,
    pub gate_scale: T,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMulT {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        stats: Vec<(T, T)>,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        prefix: Option<PrefixInput<T>>,
        spec: AttentionSpec,
        probs: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Rows {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    /// Scalar whose local gradients were computed during the forward pass.
    Precomputed {
        parts: Vec<(Var, Tensor<T>)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recorded forward computation.
#[derive(Debug)]
pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    dropout_rng: Option<ChaCha8Rng>,
    stochastic: bool,
    attention_macs: u64,
}

impl<'s, T: Real> Graph<'s, T> {
    /// An evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            dropout_rng: None,
            stochastic: false,
            attention_macs: 0,
        }
    }

    /// A training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(store: &'s ParamStore<T>, seed: u64) -> Self {
        let mut g = Self::new(store);
        g.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        g
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Whether any recorded operation drew random numbers.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// Multiply-adds spent in attention score/value products so far.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs
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

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// `x · W (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// `a · bᵀ` for `a: n×p`, `b: m×p`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, p, m) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != p {
            return Err(shape_err("matmul_t", format!("{:?} · {:?}ᵀ", av.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_nt_acc(av.data(), n, p, bv.data(), m, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMulT { a, b }, ng))
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().zip(&bv).for_each(|(x, &y)| *x *= y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale { x, c }, ng)
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(g).len() != d || self.value(b).len() != d || d == 0 {
            return Err(shape_err("layer_norm", format!("x {:?} with affine of {}", xv.shape(), self.value(g).len())));
        }
        let mut out = Tensor::zeros(xv.shape());
        let mut stats = Vec::with_capacity(xv.rows());
        {
            let (gv, bv) = (self.value(g).data(), self.value(b).data());
            for i in 0..xv.rows() {
                stats.push(layer_norm_row(xv.row(i), gv, bv, eps, &mut out.data_mut()[i * d..(i + 1) * d]));
            }
        }
        let ng = self.ng(x) || self.ng(g) || self.ng(b);
        Ok(self.push(out, Op::LayerNorm { x, g, b, stats }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    /// Inverted dropout in training graphs; identity otherwise or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let keep = r::<T>(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.stochastic = true;
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// Multi-head scaled dot-product attention over `q, k, v: n×d`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, prefix: Option<PrefixInput<T>>, spec: AttentionSpec) -> Result<Var> {
        let (n, d) = (self.value(q).rows(), self.value(q).cols());
        for (name, t) in [("k", k), ("v", v)] {
            let tv = self.value(t);
            if tv.rows() != n || tv.cols() != d {
                return Err(shape_err("attention", format!("q {:?} vs {} {:?}", self.value(q).shape(), name, tv.shape())));
            }
        }
        if spec.heads == 0 || d % spec.heads != 0 {
            return Err(shape_err("attention", format!("hidden {} not divisible into {} heads", d, spec.heads)));
        }
        let np = match prefix {
            Some(p) => {
                let (kv, vv) = (self.value(p.keys), self.value(p.values));
                if kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() || self.value(p.gate).len() != 1 {
                    return Err(shape_err("attention", format!("prefix {:?}/{:?}", kv.shape(), vv.shape())));
                }
                kv.rows()
            }
            None => 0,
        };
        let width = np + n;
        let mut probs = vec![T::zero(); n * spec.heads * width];
        let mut out = vec![T::zero(); n * d];
        let mut macs = 0;
        {
            let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
            let pre = prefix.map(|p| PrefixRows {
                keys: self.value(p.keys).data(),
                values: self.value(p.values).data(),
                count: np,
                logit_bias: p.gate_scale * self.value(p.gate).item(),
            });
            for i in 0..n {
                let n_keys = if spec.causal { i + 1 } else { n };
                let w = np + n_keys;
                let prow = &mut probs[i * spec.heads * width..(i + 1) * spec.heads * width];
                let mut scratch = vec![T::zero(); spec.heads * w];
                macs += attend_row(&qv[i * d..(i + 1) * d], pre, kv, vv, n_keys, spec.heads, &mut out[i * d..(i + 1) * d], &mut scratch);
                for h in 0..spec.heads {
                    prow[h * width..h * width + w].copy_from_slice(&scratch[h * w..(h + 1) * w]);
                }
            }
        }
        self.attention_macs += macs;
        let ng = self.ng(q)
            || self.ng(k)
            || self.ng(v)
            || prefix.is_some_and(|p| self.ng(p.keys) || self.ng(p.values) || self.ng(p.gate));
        Ok(self.push(Tensor::matrix(n, d, out), Op::Attention { q, k, v, prefix, spec, probs }, ng))
    }

    /// Row lookup into `table: V×d`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let d = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= tv.rows() {
                return Err(Error::Index {
                    what: "embedding row",
                    index: id,
                    len: tv.rows(),
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        Ok(self.push(Tensor::matrix(ids.len(), d, out), Op::Gather { table, ids: ids.to_vec() }, ng))
    }

    /// Stacks row blocks with a common width.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != d {
                return Err(shape_err("concat_rows", format!("width {} vs {}", pv.cols(), d)));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, d, data), Op::Concat { parts: parts.to_vec() }, ng))
    }

    /// Rows `start..start+len` of `x`.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::Index {
                what: "row slice end",
                index: start + len,
                len: xv.rows(),
            });
        }
        let d = xv.cols();
        let out = Tensor::matrix(len, d, xv.data()[start * d..(start + len) * d].to_vec());
        let ng = self.ng(x);
        Ok(self.push(out, Op::Rows { x, start }, ng))
    }

    /// The same values viewed as `rows × cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshape(&[rows, cols])?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    /// `Σ cᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut s = T::zero();
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum", format!("non-scalar term {:?}", t.shape())));
            }
            s += c * t.item();
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { terms: terms.to_vec() }, ng))
    }

    /// Records a scalar loss whose gradients with respect to `parts` are
    /// already known.
    pub fn precomputed_loss(&mut self, value: T, parts: Vec<(Var, Tensor<T>)>) -> Result<Var> {
        for (v, g) in &parts {
            if self.value(*v).len() != g.len() {
                return Err(shape_err("precomputed_loss", format!("grad {:?} for {:?}", g.shape(), self.value(*v).shape())));
            }
        }
        let ng = parts.iter().any(|(v, _)| self.ng(*v));
        Ok(self.push(Tensor::scalar(value), Op::Precomputed { parts }, ng))
    }

    /// `Σᵢ wᵢ · CE(logitsᵢ, targetᵢ)` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], weights: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, k) = (lv.rows(), lv.cols());
        if targets.len() != n || weights.len() != n {
            return Err(shape_err("cross_entropy", format!("{} rows, {} targets", n, targets.len())));
        }
        let mut total = T::zero();
        let mut grad = vec![T::zero(); n * k];
        for (i, (t, &w)) in targets.iter().zip(weights).enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(i);
            total += w * kernels::cross_entropy(row, t)?;
            let p = kernels::softmax(row);
            let gr = &mut grad[i * k..(i + 1) * k];
            for (j, (g, &pj)) in gr.iter_mut().zip(&p).enumerate() {
                *g = w * (pj - if j == t { T::one() } else { T::zero() });
            }
        }
        let shape = lv.shape().to_vec();
        self.precomputed_loss(total, vec![(logits, Tensor::from_vec(&shape, grad)?)])
    }

    /// `Σ wᵢ · BCE(σ(xᵢ), yᵢ)` over elements with a target.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[Option<T>], weight: T) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(shape_err("bce_with_logits", format!("{} logits, {} targets", lv.len(), targets.len())));
        }
        let mut total = T::zero();
        let mut grad = vec![T::zero(); lv.len()];
        for (i, (&x, t)) in lv.data().iter().zip(targets).enumerate() {
            let Some(y) = *t else { continue };
            // max(x,0) − x·y + log(1 + e^{−|x|})
            total += weight * (x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln());
            grad[i] = weight * (sigmoid(x) - y);
        }
        let shape = lv.shape().to_vec();
        self.precomputed_loss(total, vec![(logits, Tensor::from_vec(&shape, grad)?)])
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut out = Gradients::empty(self.store.len());
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.add_into(*id, g),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, p, q) = (xv.rows(), xv.cols(), wv.cols());
                if let Some(dx) = self.slot(grads, *x) {
                    matmul_nt_acc(gd, n, q, wv.data(), p, dx.data_mut());
                }
                if let Some(dw) = self.slot(grads, *w) {
                    matmul_tn_acc(xv.data(), n, p, gd, q, dw.data_mut());
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for row in gd.chunks(q) {
                            for (o, &v) in db.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::MatMulT { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, p, m) = (av.rows(), av.cols(), bv.rows());
                if let Some(da) = self.slot(grads, *a) {
                    matmul_acc(gd, n, m, bv.data(), p, da.data_mut());
                }
                if let Some(db) = self.slot(grads, *b) {
                    matmul_tn_acc(gd, n, m, av.data(), p, db.data_mut());
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(dv) = self.slot(grads, v) {
                        dv.data_mut().iter_mut().zip(gd).for_each(|(o, &x)| *o += x);
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    let ov = self.value(other).data();
                    if let Some(dv) = self.slot(grads, v) {
                        for ((o, &x), &y) in dv.data_mut().iter_mut().zip(gd).zip(ov) {
                            *o += x * y;
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().zip(gd).for_each(|(o, &v)| *o += *c * v);
                }
            }
            Op::LayerNorm { x, g: gamma, b, stats } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma).data();
                let d = xv.cols();
                let dn = r::<T>(d as f64);
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let want_x = self.nodes[x.0].needs_grad;
                let mut dx_all = if want_x { vec![T::zero(); xv.len()] } else { Vec::new() };
                for (i, &(mean, rstd)) in stats.iter().enumerate() {
                    let row = xv.row(i);
                    let grow = &gd[i * d..(i + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = grow[j] * gv[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                    }
                    if want_x {
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        for j in 0..d {
                            dx_all[i * d + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().zip(&dx_all).for_each(|(o, &v)| *o += v);
                }
                if let Some(dg) = self.slot(grads, *gamma) {
                    dg.data_mut().iter_mut().zip(&dgamma).for_each(|(o, &v)| *o += v);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.data_mut().iter_mut().zip(&dbeta).for_each(|(o, &v)| *o += v);
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &gv), &xx) in dx.data_mut().iter_mut().zip(gd).zip(xv) {
                        *o += gv * gelu_grad(xx);
                    }
                }
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &gv), &yy) in dx.data_mut().iter_mut().zip(gd).zip(y) {
                        *o += gv * yy * (T::one() - yy);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &gv), &m) in dx.data_mut().iter_mut().zip(gd).zip(mask) {
                        *o += gv * m;
                    }
                }
            }
            Op::Attention { q, k, v, prefix, spec, probs } => {
                self.attention_backward(*q, *k, *v, prefix.as_ref(), *spec, probs, gd, grads);
            }
            Op::Gather { table, ids } => {
                if let Some(dt) = self.slot(grads, *table) {
                    let d = dt.cols();
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&gd[i * d..(i + 1) * d]).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.slot(grads, p) {
                        dp.data_mut().iter_mut().zip(&gd[off..off + len]).for_each(|(o, &v)| *o += v);
                    }
                    off += len;
                }
            }
            Op::Rows { x, start } => {
                let d = node.value.cols();
                if let Some(dx) = self.slot(grads, *x) {
                    let dst = &mut dx.data_mut()[start * d..start * d + gd.len()];
                    dst.iter_mut().zip(gd).for_each(|(o, &v)| *o += v);
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().zip(gd).for_each(|(o, &v)| *o += v);
                }
            }
            Op::Sum { x } => {
                let s = gd[0];
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().for_each(|o| *o += s);
                }
            }
            Op::WeightedSum { terms } => {
                let s = gd[0];
                for &(v, c) in terms {
                    if let Some(dv) = self.slot(grads, v) {
                        dv.data_mut()[0] += c * s;
                    }
                }
            }
            Op::Precomputed { parts } => {
                let s = gd[0];
                for (v, lg) in parts {
                    if let Some(dv) = self.slot(grads, *v) {
                        dv.data_mut().iter_mut().zip(lg.data()).for_each(|(o, &x)| *o += s * x);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        prefix: Option<&PrefixInput<T>>,
        spec: AttentionSpec,
        probs: &[T],
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        let heads = spec.heads;
        let dh = d / heads;
        let scale = T::one() / r::<T>(dh as f64).sqrt();
        let np = prefix.map_or(0, |p| self.value(p.keys).rows());
        let width = np + n;
        let (pk, pv): (&[T], &[T]) = match prefix {
            Some(p) => (self.value(p.keys).data(), self.value(p.values).data()),
            None => (&[], &[]),
        };

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dpk = vec![T::zero(); np * d];
        let mut dpv = vec![T::zero(); np * d];
        let mut dbias = T::zero();
        let mut ds = vec![T::zero(); width];

        for i in 0..n {
            let n_keys = if spec.causal { i + 1 } else { n };
            let w = np + n_keys;
            for h in 0..heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let p = &probs[(i * heads + h) * width..(i * heads + h) * width + w];
                let go = &gd[i * d + lo..i * d + hi];
                let mut sdot = T::zero();
                for j in 0..w {
                    let vrow = if j < np { &pv[j * d + lo..j * d + hi] } else { &vv.data()[(j - np) * d + lo..(j - np) * d + hi] };
                    let dp = kernels::dot(go, vrow);
                    ds[j] = dp;
                    sdot += p[j] * dp;
                    let dvrow = if j < np { &mut dpv[j * d + lo..j * d + hi] } else { &mut dv[(j - np) * d + lo..(j - np) * d + hi] };
                    for (o, &x) in dvrow.iter_mut().zip(go) {
                        *o += p[j] * x;
                    }
                }
                let qrow = &qv.data()[i * d + lo..i * d + hi];
                for j in 0..w {
                    let s = p[j] * (ds[j] - sdot);
                    if j < np {
                        dbias += s;
                    }
                    let sc = s * scale;
                    let krow = if j < np { &pk[j * d + lo..j * d + hi] } else { &kv.data()[(j - np) * d + lo..(j - np) * d + hi] };
                    for (o, &x) in dq[i * d + lo..i * d + hi].iter_mut().zip(krow) {
                        *o += sc * x;
                    }
                    let dkrow = if j < np { &mut dpk[j * d + lo..j * d + hi] } else { &mut dk[(j - np) * d + lo..(j - np) * d + hi] };
                    for (o, &x) in dkrow.iter_mut().zip(qrow) {
                        *o += sc * x;
                    }
                }
            }
        }
        let mut put = |var: Var, src: &[T]| {
            if let Some(t) = self.slot(grads, var) {
                t.data_mut().iter_mut().zip(src).for_each(|(o, &x)| *o += x);
            }
        };
        put(q, &dq);
        put(k, &dk);
        put(v, &dv);
        if let Some(p) = prefix {
            put(p.keys, &dpk);
            put(p.values, &dpv);
            put(p.gate, &[p.gate_scale * dbias]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradCheckOptions};

    fn store_with(values: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, v) in values {
            s.add(*name, v.clone(), true);
        }
        s
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut store = store_with(&[("x", Tensor::scalar(3.0))]);
        let report = grad_check(&mut store, GradCheckOptions::default(), |g| {
            let x = g.param(ParamId(0));
            let y = g.mul(x, x)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        let g = {
            let mut graph = Graph::new(&store);
            let x = graph.param(ParamId(0));
            let y = graph.mul(x, x).unwrap();
            let l = graph.sum(y);
            graph.backward(l).unwrap()
        };
        assert!((g.get(ParamId(0)).unwrap().item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = store_with(&[("x", Tensor::matrix(1, 2, vec![1.0, 2.0]))]);
        let mut g = Graph::new(&store);
        let x = g.param(ParamId(0));
        let y = g.scale(x, 2.0);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_parameters_get_no_gradient_slot() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::matrix(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]), true);
        let w = store.add("w", Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.1]), false);
        let mut g = Graph::new(&store);
        let av = g.param(a);
        let wv = g.param(w);
        let y = g.linear(av, wv, None).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_some());
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = store_with(&[("x", Tensor::scalar(2.0))]);
        for _ in 0..3 {
            let grads = {
                let mut g = Graph::new(&store);
                let x = g.param(ParamId(0));
                let y = g.mul(x, x).unwrap();
                let l = g.sum(y);
                g.backward(l).unwrap()
            };
            store.accumulate(&grads);
        }
        assert_eq!(store.get(ParamId(0)).grad.item(), 12.0);
        store.zero_grad();
        assert_eq!(store.get(ParamId(0)).grad.item(), 0.0);
    }

    #[test]
    fn linear_cross_entropy_gradcheck() {
        let mut store = store_with(&[
            ("w", Tensor::matrix(3, 4, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect())),
            ("b", Tensor::row_vector(vec![0.1, -0.2, 0.05, 0.3])),
        ]);
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.7]);
        let report = grad_check(&mut store, GradCheckOptions::default(), |g| {
            let xv = g.input(x.clone());
            let w = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let y = g.linear(xv, w, Some(b))?;
            g.cross_entropy(y, &[Some(1), Some(3)], &[1.0, 1.0])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn every_op_passes_gradcheck() {
        let mut store = store_with(&[
            ("x", Tensor::matrix(3, 4, vec![0.3, -0.5, 1.2, 0.7, -1.1, 0.4, 0.9, -0.2, 0.6, 0.1, -0.8, 1.5])),
            ("g", Tensor::row_vector(vec![1.1, 0.9, 1.3, 0.7])),
            ("b", Tensor::row_vector(vec![0.1, -0.1, 0.2, 0.0])),
            ("pk", Tensor::matrix(2, 4, vec![0.2, -0.4, 0.3, 0.5, -0.6, 0.1, 0.7, -0.3])),
            ("pv", Tensor::matrix(2, 4, vec![0.5, 0.2, -0.1, 0.4, 0.3, -0.7, 0.2, 0.6])),
            ("gate", Tensor::scalar(-0.1)),
            ("t", Tensor::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect())),
        ]);
        let opts = GradCheckOptions { eps: 1e-5, ..Default::default() };
        for causal in [true, false] {
            let report = grad_check(&mut store, opts, |g| {
                let x = g.param(ParamId(0));
                let gam = g.param(ParamId(1));
                let bet = g.param(ParamId(2));
                let t = g.param(ParamId(6));
                let e = g.gather_rows(t, &[4, 0, 4])?;
                let x = g.add(x, e)?;
                let h = g.layer_norm(x, gam, bet, 1e-5)?;
                let prefix = PrefixInput {
                    keys: g.param(ParamId(3)),
                    values: g.param(ParamId(4)),
                    gate: g.param(ParamId(5)),
                    gate_scale: 4.0,
                };
                let a = g.attention(h, x, h, Some(prefix), AttentionSpec { heads: 2, causal })?;
                let a = g.gelu(a);
                let s = g.sigmoid(a);
                let m = g.mul(s, h)?;
                let top = g.rows(m, 1, 2)?;
                let cat = g.concat_rows(&[top, h])?;
                let logits = g.matmul_t(cat, t)?;
                let ce = g.cross_entropy(logits, &[Some(0), Some(3), None, Some(4), Some(1)], &[1.0, 0.5, 1.0, 2.0, 1.0])?;
                let flat = g.reshape(top, 1, 8)?;
                let bce = g.bce_with_logits(flat, &[Some(1.0), Some(0.0), None, Some(0.3), Some(1.0), Some(0.0), Some(0.0), Some(1.0)], 0.7)?;
                let sc = g.scale(bce, 3.0);
                g.weighted_sum(&[(ce, 1.0), (sc, 0.5)])
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "causal={causal} {report:?}");
        }
    }
}
