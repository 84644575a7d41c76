//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns the adjoint of
//! every node reachable from the loss. Parameters are read from a
//! [`ParamSet`] and enter the tape once each, so their adjoints can be
//! collected with [`Gradients::params`].
//!
//! Only the handful of operations the language models need exist here;
//! attention, layer normalization and softmax cross-entropy are fused into
//! single nodes with hand-written adjoints.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Rows(Var, Vec<usize>),
    Cols(Var, usize),
    Sum(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        probs: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Packing of `seqs` padded sequences of `seq_len` rows each; only the first
/// `lens[s]` rows of sequence `s` are real.
#[derive(Clone, Debug)]
pub struct SeqLayout {
    pub seqs: usize,
    pub seq_len: usize,
    pub lens: Vec<usize>,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(k, tb.rows(), "matmul inner dimensions");
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, out.data_mut());
        self.push(out, Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shapes");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(ta.shape(), data).expect("same shape");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(bias));
        assert_eq!(ta.cols(), tb.len(), "bias width");
        let mut out = ta.clone();
        let n = tb.len();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += tb.data()[i % n];
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.shape(), c.shape(), "mask shape");
        let data = ta.data().iter().zip(c.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(ta.shape(), data).expect("same shape");
        self.push(out, Op::MulConst(a, c))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out =
            Tensor::from_vec(ta.shape(), ta.data().iter().map(|&x| f(x)).collect()).expect("shape");
        self.push(out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Gathers rows by index; used both for embedding lookup and for picking
    /// output positions. Indices may repeat.
    pub fn rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::from_vec(&[idx.len(), c], data).expect("shape");
        self.push(out, Op::Rows(a, idx))
    }

    /// Column slice `[start, start + width)` of a matrix.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let ta = self.value(a);
        let (m, c) = (ta.rows(), ta.cols());
        assert!(start + width <= c, "column slice out of range");
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&ta.row(i)[start..start + width]);
        }
        let out = Tensor::from_vec(&[m, width], data).expect("shape");
        self.push(out, Op::Cols(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let tx = self.value(x);
        let (m, d) = (tx.rows(), tx.cols());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert_eq!(g.len(), d);
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_vec(&[m, d], out).expect("shape");
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention over padded sequences.
    /// `q`, `k`, `v` are `(seqs * seq_len) x width`; keys beyond a
    /// sequence's length are masked out.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: SeqLayout, heads: usize) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let width = tq.cols();
        let t = layout.seq_len;
        assert_eq!(tq.rows(), layout.seqs * t);
        assert_eq!(width % heads, 0, "width divisible by heads");
        assert!(layout.lens.iter().all(|&l| l >= 1 && l <= t));
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; layout.seqs * heads * t * t];
        let mut out = Tensor::zeros(&[layout.seqs * t, width]);
        let mut scores = vec![0.0; t];
        for s in 0..layout.seqs {
            let len = layout.lens[s];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    let qi = &tq.row(s * t + i)[off..off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        let kj = &tk.row(s * t + j)[off..off + dh];
                        let sc = dot(qi, kj) * scale;
                        scores[j] = sc;
                        max = max.max(sc);
                    }
                    let mut z = 0.0;
                    for sc in &mut scores[..len] {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let base = ((s * heads + h) * t + i) * t;
                    let orow = &mut out.row_mut(s * t + i)[off..off + dh];
                    for j in 0..len {
                        let p = scores[j] / z;
                        probs[base + j] = p;
                        let vj = &tv.row(s * t + j)[off..off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
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
        )
    }

    /// Summed softmax cross-entropy in nats over the rows with a target.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let tl = self.value(logits);
        let (m, c) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), m);
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for i in 0..m {
            let p = &mut probs[i * c..(i + 1) * c];
            softmax_into(tl.row(i), p);
            if let Some(y) = targets[i] {
                assert!(y < c, "target out of range");
                loss -= log_softmax_at(tl.row(i), y);
            }
        }
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
            shapes: self.params.tensors().iter().map(|t| t.shape().to_vec()).collect(),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let ga = slot(grads, *a, ta);
                gemm(m, n, k, g.data(), false, tb.data(), true, 1.0, ga.data_mut());
                let gb = slot(grads, *b, tb);
                gemm(k, m, n, ta.data(), true, g.data(), false, 1.0, gb.data_mut());
            }
            Op::Add(a, b) => {
                slot(grads, *a, val(*a)).add_assign(g);
                slot(grads, *b, val(*b)).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(grads, *a, val(*a)).add_assign(g);
                let gb = slot(grads, *b, val(*b));
                for (x, d) in gb.data_mut().iter_mut().zip(g.data()) {
                    *x -= d;
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = slot(grads, *a, ta);
                for ((x, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                    *x += d * y;
                }
                let gb = slot(grads, *b, tb);
                for ((x, d), y) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                    *x += d * y;
                }
            }
            Op::AddRow(a, bias) => {
                slot(grads, *a, val(*a)).add_assign(g);
                let gb = slot(grads, *bias, val(*bias));
                let n = gb.len();
                for (i, d) in g.data().iter().enumerate() {
                    gb.data_mut()[i % n] += d;
                }
            }
            Op::Scale(a, s) => {
                let ga = slot(grads, *a, val(*a));
                for (x, d) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += s * d;
                }
            }
            Op::MulConst(a, c) => {
                let ga = slot(grads, *a, val(*a));
                for ((x, d), m) in ga.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                    *x += d * m;
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, val(*a));
                for ((x, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *x += d * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, val(*a));
                for ((x, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *x += d * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let ga = slot(grads, *a, val(*a));
                for ((x, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    if *y > 0.0 {
                        *x += d;
                    }
                }
            }
            Op::Rows(a, idx_list) => {
                let ga = slot(grads, *a, val(*a));
                for (r, &i) in idx_list.iter().enumerate() {
                    for (x, d) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += d;
                    }
                }
            }
            Op::Cols(a, start) => {
                let ga = slot(grads, *a, val(*a));
                let w = g.cols();
                for i in 0..g.rows() {
                    for (x, d) in ga.row_mut(i)[*start..start + w].iter_mut().zip(g.row(i)) {
                        *x += d;
                    }
                }
            }
            Op::Sum(a) => {
                let d = g.data()[0];
                for x in slot(grads, *a, val(*a)).data_mut() {
                    *x += d;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).data().to_vec();
                let d = gam.len();
                let m = inv_std.len();
                {
                    let gb = slot(grads, *beta, val(*beta));
                    for i in 0..m {
                        for (x, dy) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *x += dy;
                        }
                    }
                }
                {
                    let gg = slot(grads, *gamma, val(*gamma));
                    for i in 0..m {
                        for j in 0..d {
                            gg.data_mut()[j] += g.row(i)[j] * xhat[i * d + j];
                        }
                    }
                }
                let gx = slot(grads, *x, val(*x));
                let mut dxhat = vec![0.0; d];
                for i in 0..m {
                    let gi = g.row(i);
                    let xh = &xhat[i * d..(i + 1) * d];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        dxhat[j] = gi[j] * gam[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xh[j];
                    }
                    let k = inv_std[i] / d as f64;
                    for (j, out) in gx.row_mut(i).iter_mut().enumerate() {
                        *out += k * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
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
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let width = tq.cols();
                let dh = width / heads;
                let t = layout.seq_len;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Tensor::zeros(tq.shape());
                let mut gk = Tensor::zeros(tk.shape());
                let mut gv = Tensor::zeros(tv.shape());
                let mut dp = vec![0.0; t];
                for s in 0..layout.seqs {
                    let len = layout.lens[s];
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..t {
                            let base = ((s * heads + h) * t + i) * t;
                            let p = &probs[base..base + len];
                            let go = &g.row(s * t + i)[off..off + dh];
                            let mut acc = 0.0;
                            for j in 0..len {
                                dp[j] = dot(go, &tv.row(s * t + j)[off..off + dh]);
                                acc += dp[j] * p[j];
                                let gvj = &mut gv.row_mut(s * t + j)[off..off + dh];
                                for (x, d) in gvj.iter_mut().zip(go) {
                                    *x += p[j] * d;
                                }
                            }
                            for j in 0..len {
                                let ds = p[j] * (dp[j] - acc) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &tk.row(s * t + j)[off..off + dh];
                                let gqi = &mut gq.row_mut(s * t + i)[off..off + dh];
                                for (x, y) in gqi.iter_mut().zip(kj) {
                                    *x += ds * y;
                                }
                                let qi = &tq.row(s * t + i)[off..off + dh];
                                let gkj = &mut gk.row_mut(s * t + j)[off..off + dh];
                                for (x, y) in gkj.iter_mut().zip(qi) {
                                    *x += ds * y;
                                }
                            }
                        }
                    }
                }
                slot(grads, *q, tq).add_assign(&gq);
                slot(grads, *k, tk).add_assign(&gk);
                slot(grads, *v, tv).add_assign(&gv);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let d = g.data()[0];
                let gl = slot(grads, *logits, val(*logits));
                let c = gl.cols();
                for (i, target) in targets.iter().enumerate() {
                    let Some(y) = *target else { continue };
                    let row = gl.row_mut(i);
                    for j in 0..c {
                        row[j] += d * probs[i * c + j];
                    }
                    row[y] -= d;
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// One gradient per parameter; parameters unused by the loss get zeros.
    pub fn params(&self) -> Vec<Tensor> {
        self.param_vars
            .iter()
            .zip(&self.shapes)
            .map(|(v, shape)| {
                v.and_then(|v| self.grads[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(shape))
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax written into `out`.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub(crate) fn log_softmax_at(v: &[f64], i: usize) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v[i] - lse
}
