//! The tape: a flat list of nodes in creation order. Reverse traversal of that
//! order is a valid topological order for backpropagation.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, matmul_acc, View};
use super::params::{ParamId, ParamStore};
use super::{AdError, Tensor};
use crate::seed::rng_from_seed;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Arc<Vec<f64>>),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    Norm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64>, axis: NormAxis },
    Dropout(Var, Vec<f64>),
    Embedding(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanPool(Var, usize),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, probs: Vec<f64> },
    GraphMix(Var, Arc<Vec<f64>>, usize),
    SumAll(Var),
    Mse(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormAxis {
    /// Normalize each row (layer normalization).
    Rows,
    /// Normalize each column over the batch (batch normalization, training).
    Cols,
    /// Per-column affine with constant statistics (batch normalization, eval).
    Fixed,
}

#[derive(Debug, Clone, Copy)]
struct AttnDims {
    batch: usize,
    seq: usize,
    heads: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    /// False for subgraphs that depend on no parameter.
    needs_grad: bool,
    /// Batch statistics recorded by training-mode batch normalization.
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

const LAYER_NORM_EPS: f64 = 1e-12;
pub const BATCH_NORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AdError {
    AdError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn gelu(x: f64) -> (f64, f64) {
    // tanh approximation, with derivative
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

impl Graph {
    /// A graph in training mode (dropout and batch statistics active) with a
    /// dropout stream derived from `seed`.
    pub fn new(training: bool, seed: u64) -> Self {
        Self { nodes: Vec::new(), training, rng: rng_from_seed(seed) }
    }

    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => op_inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad, stats: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Mean and biased variance of the last training-mode batch norm at `v`.
    pub fn batch_stats(&self, v: Var) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.nodes[v.0].stats.as_ref()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), AdError> {
        match self.shape(v) {
            [n, m] => Ok((*n, *m)),
            s => Err(shape_err(op, s, &[])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (n, k) = self.dims2(a, "matmul")?;
        let (k2, m) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.data(a), self.data(b), &mut out, n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Elementwise product with a constant (e.g. a connectivity mask).
    pub fn mul_const(&mut self, a: Var, c: Arc<Vec<f64>>) -> Result<Var, AdError> {
        if c.len() != self.data(a).len() {
            return Err(shape_err("mul_const", self.shape(a), &[c.len()]));
        }
        let data = self.data(a).iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    /// Adds a length-`m` bias to every row of an `n x m` matrix.
    pub fn bias(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let (_, m) = self.dims2(x, "bias")?;
        if self.shape(b) != [m] {
            return Err(shape_err("bias", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b).to_vec();
        let mut data = self.data(x).to_vec();
        for row in data.chunks_exact_mut(m) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::AddBias(x, b)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), |x| gelu(x).0)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AdError> {
        let (_, m) = self.dims2(a, "softmax")?;
        let mut data = self.data(a).to_vec();
        for row in data.chunks_exact_mut(m) {
            softmax_in_place(row);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::Softmax(a)))
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// affine `gamma`, `beta` (both of the row width).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AdError> {
        let (n, m) = self.dims2(x, "layer_norm")?;
        if self.shape(gamma) != [m] || self.shape(beta) != [m] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.data(x);
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for (o, v) in xhat[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o = (v - mu) * r;
            }
        }
        let (g, b) = (self.data(gamma), self.data(beta));
        let out: Vec<f64> = xhat.iter().enumerate().map(|(i, xh)| xh * g[i % m] + b[i % m]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, out), Op::Norm { x, gamma, beta, xhat, rstd, axis: NormAxis::Rows }))
    }

    /// Batch normalization over the rows of an `n x m` matrix. In training
    /// mode batch statistics are used and recorded (see [`Graph::batch_stats`]);
    /// otherwise the supplied running statistics are applied.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: (&[f64], &[f64])) -> Result<Var, AdError> {
        let (n, m) = self.dims2(x, "batch_norm")?;
        if self.shape(gamma) != [m] || self.shape(beta) != [m] || running.0.len() != m || running.1.len() != m {
            return Err(shape_err("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.data(x);
        let (mean, var) = if self.training {
            let mut mean = vec![0.0; m];
            for row in src.chunks_exact(m) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= n as f64);
            let mut var = vec![0.0; m];
            for row in src.chunks_exact(m) {
                for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - mu).powi(2);
                }
            }
            var.iter_mut().for_each(|a| *a /= n as f64);
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let xhat: Vec<f64> = src.iter().enumerate().map(|(i, v)| (v - mean[i % m]) * rstd[i % m]).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let out: Vec<f64> = xhat.iter().enumerate().map(|(i, xh)| xh * g[i % m] + b[i % m]).collect();
        let shape = self.shape(x).to_vec();
        let axis = if self.training { NormAxis::Cols } else { NormAxis::Fixed };
        let v = self.push(Tensor::new(shape, out), Op::Norm { x, gamma, beta, xhat, rstd, axis });
        if self.training {
            self.nodes[v.0].stats = Some((mean, var));
        }
        Ok(v)
    }

    /// Inverted dropout: active only in training mode with `p > 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let n = self.data(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = self.data(x).iter().zip(&mask).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, data), Op::Dropout(x, mask))
    }

    /// Gathers rows of a `V x d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AdError> {
        let (vocab, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(AdError::Index { op: "embedding", index: bad, bound: vocab });
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(Tensor::new(vec![ids.len(), d], data), Op::Embedding(table, ids.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let n = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::new();
        for &p in parts {
            let (pn, pm) = self.dims2(p, "concat_cols")?;
            if pn != n {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(vec![n, total], data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let m = self.dims2(parts[0], "concat_rows")?.1;
        let mut n = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pn, pm) = self.dims2(p, "concat_rows")?;
            if pm != m {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            n += pn;
            data.extend_from_slice(self.data(p));
        }
        Ok(self.push(Tensor::new(vec![n, m], data), Op::ConcatRows(parts.to_vec())))
    }

    /// Averages consecutive groups of `seq` rows: `(B*seq) x d -> B x d`.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var, AdError> {
        let (n, d) = self.dims2(x, "mean_pool")?;
        if seq == 0 || n % seq != 0 {
            return Err(shape_err("mean_pool", self.shape(x), &[seq]));
        }
        let b = n / seq;
        let src = self.data(x);
        let mut data = vec![0.0; b * d];
        for (i, row) in src.chunks_exact(d).enumerate() {
            for (o, v) in data[(i / seq) * d..(i / seq + 1) * d].iter_mut().zip(row) {
                *o += v / seq as f64;
            }
        }
        Ok(self.push(Tensor::new(vec![b, d], data), Op::MeanPool(x, seq)))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, AdError> {
        let (n, d) = self.dims2(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(AdError::Index { op: "select_rows", index: bad, bound: n });
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        Ok(self.push(Tensor::new(vec![rows.len(), d], data), Op::SelectRows(x, rows.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        if shape.iter().product::<usize>() != self.data(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(Tensor::new(shape.to_vec(), data), Op::Reshape(x)))
    }

    /// Multi-head scaled dot-product self-attention over `batch` sequences of
    /// length `seq`. `q`, `k`, `v` are `(batch*seq) x d` with `d` divisible by
    /// `heads`; the result has the same shape, heads concatenated.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var, AdError> {
        let (n, d) = self.dims2(q, "attention")?;
        if self.shape(k) != [n, d] || self.shape(v) != [n, d] {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if n != batch * seq || heads == 0 || d % heads != 0 {
            return Err(shape_err("attention", &[n, d], &[batch, seq, heads]));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; n * d];
        let ss = seq * seq;
        for b in 0..batch {
            for h in 0..heads {
                let at = b * seq * d + h * dh;
                let p = &mut probs[(b * heads + h) * ss..(b * heads + h + 1) * ss];
                // P = scale * Q_bh K_bh^T, row-softmaxed
                gemm(seq, dh, seq, scale, View::block(qd, at, d), View::block_t(kd, at, d), 0.0, p, seq);
                p.chunks_exact_mut(seq).for_each(softmax_in_place);
                gemm(seq, seq, dh, 1.0, View::rows(p, seq), View::block(vd, at, d), 0.0, &mut out[at..], d);
            }
        }
        let dims = AttnDims { batch, seq, heads };
        Ok(self.push(Tensor::new(vec![n, d], out), Op::Attention { q, k, v, dims, probs }))
    }

    /// Mixes node features with a constant `K x K` operator, independently for
    /// each graph in the batch: `x` is `(B*K) x C`, row `b*K + i` is node `i`.
    pub fn graph_mix(&mut self, x: Var, op: Arc<Vec<f64>>, k: usize) -> Result<Var, AdError> {
        let (n, c) = self.dims2(x, "graph_mix")?;
        if op.len() != k * k || k == 0 || n % k != 0 {
            return Err(shape_err("graph_mix", self.shape(x), &[k, k]));
        }
        let src = self.data(x);
        let mut out = vec![0.0; n * c];
        for b in 0..n / k {
            let xb = &src[b * k * c..(b + 1) * k * c];
            matmul_acc(&op, xb, &mut out[b * k * c..(b + 1) * k * c], k, k, c);
        }
        Ok(self.push(Tensor::new(vec![n, c], out), Op::GraphMix(x, op, k)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var, AdError> {
        if self.data(pred).len() != target.len() {
            return Err(shape_err("mse", self.shape(pred), &[target.len()]));
        }
        let n = target.len() as f64;
        let l = self.data(pred).iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(l), Op::Mse(pred, target.to_vec())))
    }

    /// Mean cross-entropy of `n x C` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var, AdError> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if n != classes.len() {
            return Err(shape_err("cross_entropy", self.shape(logits), &[classes.len()]));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(AdError::Index { op: "cross_entropy", index: bad, bound: c });
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (row, &k) in probs.chunks_exact_mut(c).zip(classes) {
            softmax_in_place(row);
            loss -= row[k].max(f64::MIN_POSITIVE).ln();
        }
        loss /= n as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, classes.to_vec(), probs)))
    }

    /// Backpropagates from a scalar and adds parameter gradients into `store`.
    /// Gradients accumulate: calling twice doubles them.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), AdError> {
        if self.data(loss).len() != 1 {
            return Err(AdError::NotScalar { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.data.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| gemm(n, m, k, 1.0, View::rows(g, m), View::transposed(bd, m), 1.0, ga, k));
                acc(*b, &mut |gb| gemm(k, n, m, 1.0, View::transposed(ad, k), View::rows(g, m), 1.0, gb, m));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(bd).for_each(|((o, x), y)| *o += x * y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).zip(ad).for_each(|((o, x), y)| *o += x * y));
            }
            Op::MulConst(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(c.iter()).for_each(|((o, x), y)| *o += x * y)),
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x * s)),
            Op::AddBias(x, b) => {
                let m = self.shape(*b)[0];
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for row in g.chunks_exact(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).zip(ad).for_each(|((o, x), v)| {
                        if *v > 0.0 {
                            *o += x
                        }
                    })
                });
            }
            Op::LeakyRelu(a, s) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(ad).for_each(|((o, x), v)| *o += if *v > 0.0 { *x } else { s * x }));
            }
            Op::Tanh(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(out).for_each(|((o, x), y)| *o += x * (1.0 - y * y))),
            Op::Gelu(a) => {
                let ad = self.data(*a);
                acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(ad).for_each(|((o, x), v)| *o += x * gelu(*v).1));
            }
            Op::Softmax(a) => {
                let m = self.shape(*a)[1];
                acc(*a, &mut |ga| {
                    for ((grow, prow), orow) in g.chunks_exact(m).zip(out.chunks_exact(m)).zip(ga.chunks_exact_mut(m)) {
                        let dot: f64 = grow.iter().zip(prow).map(|(x, p)| x * p).sum();
                        for ((o, x), p) in orow.iter_mut().zip(grow).zip(prow) {
                            *o += p * (x - dot);
                        }
                    }
                });
            }
            Op::Norm { x, gamma, beta, xhat, rstd, axis } => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gam = self.data(*gamma);
                acc(*gamma, &mut |gg| {
                    for (i, (gv, xh)) in g.iter().zip(xhat).enumerate() {
                        gg[i % m] += gv * xh;
                    }
                });
                acc(*beta, &mut |gb| {
                    for row in g.chunks_exact(m) {
                        add_into(gb, row);
                    }
                });
                let dxhat: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * gam[i % m]).collect();
                acc(*x, &mut |gx| match axis {
                    NormAxis::Rows => {
                        for i in 0..n {
                            let d = &dxhat[i * m..(i + 1) * m];
                            let xh = &xhat[i * m..(i + 1) * m];
                            let mean_d = d.iter().sum::<f64>() / m as f64;
                            let mean_dx = d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                            for j in 0..m {
                                gx[i * m + j] += rstd[i] * (d[j] - mean_d - xh[j] * mean_dx);
                            }
                        }
                    }
                    NormAxis::Cols => {
                        let mut mean_d = vec![0.0; m];
                        let mut mean_dx = vec![0.0; m];
                        for i in 0..n * m {
                            mean_d[i % m] += dxhat[i] / n as f64;
                            mean_dx[i % m] += dxhat[i] * xhat[i] / n as f64;
                        }
                        for i in 0..n * m {
                            let j = i % m;
                            gx[i] += rstd[j] * (dxhat[i] - mean_d[j] - xhat[i] * mean_dx[j]);
                        }
                    }
                    NormAxis::Fixed => {
                        for i in 0..n * m {
                            gx[i] += rstd[i % m] * dxhat[i];
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &mut |ga| ga.iter_mut().zip(g).zip(mask).for_each(|((o, x), k)| *o += x * k)),
            Op::Embedding(table, ids) => {
                let d = self.shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.shape[0];
                let total = node.value.shape[1];
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, &mut |gp| {
                        for i in 0..n {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.data(p).len();
                    acc(p, &mut |gp| add_into(gp, &g[start..start + len]));
                    start += len;
                }
            }
            Op::MeanPool(x, seq) => {
                let d = self.shape(*x)[1];
                acc(*x, &mut |gx| {
                    for (i, row) in gx.chunks_exact_mut(d).enumerate() {
                        for (o, v) in row.iter_mut().zip(&g[(i / seq) * d..(i / seq + 1) * d]) {
                            *o += v / *seq as f64;
                        }
                    }
                });
            }
            Op::SelectRows(x, rows) => {
                let d = self.shape(*x)[1];
                acc(*x, &mut |gx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * d..(r + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Attention { q, k, v, dims, probs } => {
                let AttnDims { batch, seq, heads } = *dims;
                let d = self.shape(*q)[1];
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let ss = seq * seq;
                let mut ds = vec![0.0; ss];
                for b in 0..batch {
                    for h in 0..heads {
                        let at = b * seq * d + h * dh;
                        let p = &probs[(b * heads + h) * ss..(b * heads + h + 1) * ss];
                        let go = View::block(g, at, d);
                        gemm(seq, seq, dh, 1.0, View::transposed(p, seq), go, 1.0, &mut gv[at..], d);
                        // dS = P * (dP - rowsum(dP * P)) * scale with dP = dO V^T
                        gemm(seq, dh, seq, 1.0, go, View::block_t(vd, at, d), 0.0, &mut ds, seq);
                        for (drow, prow) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                            let dot: f64 = drow.iter().zip(prow).map(|(a, c)| a * c).sum();
                            for (x, &pij) in drow.iter_mut().zip(prow) {
                                *x = pij * (*x - dot) * scale;
                            }
                        }
                        gemm(seq, seq, dh, 1.0, View::rows(&ds, seq), View::block(kd, at, d), 1.0, &mut gq[at..], d);
                        gemm(seq, seq, dh, 1.0, View::transposed(&ds, seq), View::block(qd, at, d), 1.0, &mut gk[at..], d);
                    }
                }
                acc(*q, &mut |o| add_into(o, &gq));
                acc(*k, &mut |o| add_into(o, &gk));
                acc(*v, &mut |o| add_into(o, &gv));
            }
            Op::GraphMix(x, op, k) => {
                let c = self.shape(*x)[1];
                let k = *k;
                acc(*x, &mut |gx| {
                    for (b, chunk) in gx.chunks_exact_mut(k * c).enumerate() {
                        let gb = &g[b * k * c..(b + 1) * k * c];
                        gemm(k, k, c, 1.0, View::transposed(op, k), View::rows(gb, c), 1.0, chunk, c);
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mse(pred, target) => {
                let n = target.len() as f64;
                let pd = self.data(*pred);
                acc(*pred, &mut |gp| {
                    for ((o, p), t) in gp.iter_mut().zip(pd).zip(target) {
                        *o += g[0] * 2.0 * (p - t) / n;
                    }
                });
            }
            Op::CrossEntropy(logits, classes, probs) => {
                let c = self.shape(*logits)[1];
                let n = classes.len() as f64;
                acc(*logits, &mut |gl| {
                    for (i, &k) in classes.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == k { 1.0 } else { 0.0 };
                            gl[i * c + j] += g[0] * (probs[i * c + j] - target) / n;
                        }
                    }
                });
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => Vec::new(),
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
        Op::MulConst(a, _)
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::LeakyRelu(a, _)
        | Op::Tanh(a)
        | Op::Gelu(a)
        | Op::Softmax(a)
        | Op::Dropout(a, _)
        | Op::Embedding(a, _)
        | Op::MeanPool(a, _)
        | Op::SelectRows(a, _)
        | Op::Reshape(a)
        | Op::GraphMix(a, _, _)
        | Op::SumAll(a)
        | Op::Mse(a, _)
        | Op::CrossEntropy(a, _, _) => vec![*a],
        Op::Norm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = (*r - max).exp();
        sum += *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
}
