//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution order,
//! so the node list is already a topological order. [`Graph::backward`] walks
//! it once in reverse; the tape cannot be replayed afterwards.

use std::str::FromStr;

use super::lstm::{self, LstmCache};
use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_strided, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch statistics observed by a train-mode batchnorm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Weights of one LSTM direction as graph variables: input projection
/// `[d_in x 4h]`, recurrent projection `[h x 4h]`, bias `[4h]`; gate blocks
/// ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Act(Var, Activation),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    TileRows(Var),
    ScaleRows(Var, Var),
    MeanRows(Var),
    Dropout(Var, Vec<f64>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    BiLstm { x: Var, fwd: LstmVars, bwd: LstmVars, cache: Box<[LstmCache; 2]> },
}

struct Node {
    value: Tensor,
    op: Op,
    source: Option<(u64, ParamId)>,
}

/// One recorded forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    pending: Vec<(u64, ParamId, Vec<f64>)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: {a:?} vs {b:?}"))
}

fn is_vector(t: &Tensor, len: usize) -> bool {
    t.numel() == len && (t.shape().len() == 1 || t.rows() == 1 || t.cols() == 1)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false, pending: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, source: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf bound to a stored parameter. Gradients reach the store only if it
    /// is passed to [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.zero_grad();
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].source = Some((store.uid(), id));
        v
    }

    /// Copies `v` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul inner dimensions", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        super::tensor::gemm(m, k, n, ta.data(), tb.data(), &mut out);
        let t = Tensor::new([m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = tx.cols();
        if !is_vector(tb, d) {
            return Err(dim_err("row broadcast", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(d) {
            row.iter_mut().zip(tb.data()).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    /// `y = x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.map(a, |x| k * x);
        self.push(t, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = self.map(a, |x| x + k);
        self.push(t, Op::AddScalar(a))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = match kind {
            Activation::Sigmoid => self.map(a, sigmoid),
            Activation::Tanh => self.map(a, f64::tanh),
            Activation::Relu => self.map(a, |x| x.max(0.0)),
        };
        self.push(t, Op::Act(a, kind))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::abs);
        self.push(t, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s = ta.data().iter().sum::<f64>() / ta.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(dim_err("concat rows", ta.shape(), tb.shape()));
        }
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let t = Tensor::new([n, ca + cb], data)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Repeats a single row `n` times.
    pub fn tile_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() != 1 {
            return Err(Error::Dimension(format!("tile_rows expects one row, got {:?}", ta.shape())));
        }
        let d = ta.cols();
        let data = ta.data().repeat(n);
        let t = Tensor::new([n, d], data)?;
        Ok(self.push(t, Op::TileRows(a)))
    }

    /// `out[t, :] = s[t] * x[t, :]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let n = tx.rows();
        if !is_vector(ts, n) || tx.shape().len() != 2 {
            return Err(dim_err("row scaling", tx.shape(), ts.shape()));
        }
        let d = tx.cols();
        let mut out = tx.clone();
        for (row, k) in out.data_mut().chunks_mut(d).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push(out, Op::ScaleRows(x, s)))
    }

    /// Column means, as a `1 x d` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (n, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            out.iter_mut().zip(tx.row(i)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let t = Tensor::new([1, d], out).expect("row");
        self.push(t, Op::MeanRows(x))
    }

    /// Inverted dropout with a caller-drawn keep mask; kept units are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, keep: impl FnMut() -> bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let mut keep = keep;
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel()).map(|_| if keep() { scale } else { 0.0 }).collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape(), data)?;
        Ok(self.push(t, Op::Dropout(x, mask)))
    }

    /// Batch normalization over rows. Train mode returns the batch statistics so
    /// the caller can fold them into its running averages.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let (n, d) = (tx.rows(), tx.cols());
        if n == 0 || tx.numel() == 0 {
            return Err(Error::EmptyBatch);
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if !is_vector(tg, d) || !is_vector(tb, d) {
            return Err(dim_err("batchnorm affine parameters", tx.shape(), tg.shape()));
        }
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    mean.iter_mut().zip(tx.row(i)).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(tx.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let stats = BatchStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != d || var.len() != d {
                    return Err(Error::Dimension(format!(
                        "running statistics have length {}/{}, features {d}",
                        mean.len(),
                        var.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (tx.data()[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new([n, d], out)?;
        let train = stats.is_some();
        let v = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train });
        Ok((v, stats))
    }

    /// Bidirectional LSTM over the rows of `x` (`T x d_in`), zero initial state in
    /// both directions. Row `t` of the output is `[h_fwd(t), h_bwd(t)]`.
    pub fn bilstm(&mut self, x: Var, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
        let tx = self.value(x);
        if tx.rows() == 0 || tx.numel() == 0 {
            return Err(Error::EmptySequence);
        }
        let weights = |d: &LstmVars| lstm::LstmRef {
            w_x: self.value(d.w_x),
            w_h: self.value(d.w_h),
            b: self.value(d.b),
        };
        let (wf, wb) = (weights(&fwd), weights(&bwd));
        wf.check(tx.cols())?;
        wb.check(tx.cols())?;
        if wf.hidden() != wb.hidden() {
            return Err(Error::Dimension(format!(
                "forward hidden size {} differs from backward {}",
                wf.hidden(),
                wb.hidden()
            )));
        }
        let t_len = tx.rows();
        let h = wf.hidden();
        let cf = lstm::run_direction(tx, &wf, false);
        let cb = lstm::run_direction(tx, &wb, true);
        let mut out = vec![0.0; t_len * 2 * h];
        for t in 0..t_len {
            out[t * 2 * h..t * 2 * h + h].copy_from_slice(&cf.h[t * h..(t + 1) * h]);
            out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&cb.h[t * h..(t + 1) * h]);
        }
        let value = Tensor::new([t_len, 2 * h], out)?;
        Ok(self.push(value, Op::BiLstm { x, fwd, bwd, cache: Box::new([cf, cb]) }))
    }

    /// Registers a buffer overwrite to apply with [`Graph::commit_buffers`].
    pub fn defer_buffer_update(&mut self, store: &ParamStore, id: ParamId, values: Vec<f64>) {
        self.pending.push((store.uid(), id, values));
    }

    /// Applies deferred buffer updates that belong to `store`.
    pub fn commit_buffers(&mut self, store: &mut ParamStore) -> Result<()> {
        let uid = store.uid();
        let mut rest = Vec::new();
        for (owner, id, values) in self.pending.drain(..) {
            if owner == uid {
                store.set_values(id, &values)?;
            } else {
                rest.push((owner, id, values));
            }
        }
        self.pending = rest;
        Ok(())
    }

    /// Reverse pass from the scalar `loss`. Gradients of parameter leaves are
    /// accumulated into the matching entries of `stores`; everything else is
    /// dropped. The graph is spent afterwards.
    pub fn backward(&mut self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this graph; record a new forward pass".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!("loss must be a scalar, got shape {:?}", self.value(loss).shape())));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some((uid, id)) = node.source {
                if let Some(store) = stores.iter_mut().find(|s| s.uid() == uid) {
                    store.get_mut(id).accumulate_grad(&g);
                }
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; m * k];
                gemm_strided(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm_strided(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), &mut db, 0.0);
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddRow(x, b) => {
                let d = self.value(*x).cols();
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    db.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(*x, g.to_vec());
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, k) => acc(*a, g.iter().map(|v| v * k).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Act(a, kind) => {
                let d = match kind {
                    Activation::Sigmoid => g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Activation::Tanh => g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Activation::Relu => {
                        g.iter().zip(out).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect()
                    }
                };
                acc(*a, d);
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 }).collect());
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let mut ga = Vec::with_capacity(g.len() / (ca + cb) * ca);
                let mut gb = Vec::with_capacity(g.len() / (ca + cb) * cb);
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::TileRows(a) => {
                let d = self.value(*a).cols();
                let mut ga = vec![0.0; d];
                for row in g.chunks(d) {
                    ga.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(*a, ga);
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let d = tx.cols();
                let mut gx = g.to_vec();
                let mut gs = vec![0.0; ts.numel()];
                for (t, k) in ts.data().iter().enumerate() {
                    let gr = &g[t * d..(t + 1) * d];
                    gs[t] = gr.iter().zip(tx.row(t)).map(|(a, b)| a * b).sum();
                    gx[t * d..(t + 1) * d].iter_mut().for_each(|v| *v *= k);
                }
                acc(*x, gx);
                acc(*s, gs);
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let n = tx.rows();
                let row: Vec<f64> = g.iter().map(|v| v / n as f64).collect();
                acc(*x, row.repeat(n));
            }
            Op::Dropout(x, mask) => acc(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let d = inv_std.len();
                let n = g.len() / d;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        dgamma[j] += g[i * d + j] * xhat[i * d + j];
                        dbeta[j] += g[i * d + j];
                    }
                }
                let mut dx = vec![0.0; n * d];
                if *train {
                    let nf = n as f64;
                    for j in 0..d {
                        // dxhat = g * gamma; sums over the batch reuse dbeta/dgamma.
                        let sum_dxhat = dbeta[j] * gam[j];
                        let sum_dxhat_xhat = dgamma[j] * gam[j];
                        for i in 0..n {
                            let dxhat = g[i * d + j] * gam[j];
                            dx[i * d + j] =
                                inv_std[j] / nf * (nf * dxhat - sum_dxhat - xhat[i * d + j] * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for i in 0..n {
                        for j in 0..d {
                            dx[i * d + j] = g[i * d + j] * gam[j] * inv_std[j];
                        }
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::BiLstm { x, fwd, bwd, cache } => {
                let tx = self.value(*x);
                let h = cache[0].hidden;
                let t_len = tx.rows();
                let mut dx = vec![0.0; tx.numel()];
                for (dir, (vars, c)) in [(fwd, &cache[0]), (bwd, &cache[1])].into_iter().enumerate() {
                    let mut dh_out = vec![0.0; t_len * h];
                    for t in 0..t_len {
                        let src = &g[t * 2 * h + dir * h..t * 2 * h + dir * h + h];
                        dh_out[t * h..(t + 1) * h].copy_from_slice(src);
                    }
                    let w = lstm::LstmRef {
                        w_x: self.value(vars.w_x),
                        w_h: self.value(vars.w_h),
                        b: self.value(vars.b),
                    };
                    let gr = lstm::backprop_direction(tx, &w, c, &dh_out);
                    dx.iter_mut().zip(&gr.dx).for_each(|(a, b)| *a += b);
                    acc(vars.w_x, gr.dw_x);
                    acc(vars.w_h, gr.dw_h);
                    acc(vars.b, gr.db);
                }
                acc(*x, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_passes_bias() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([1, 3]));
        let w = g.input(Tensor::new([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.input(Tensor::new([2], vec![0.5, -0.5]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -0.5]);
        assert_eq!(g.value(y).shape(), &[1, 2]);
    }

    #[test]
    fn identity_linear() {
        let mut g = Graph::new();
        let x = g.input(Tensor::eye(2));
        let w = g.input(Tensor::eye(2));
        let b = g.input(Tensor::zeros([2]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), &Tensor::eye(2));
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([2, 3]));
        let w = g.input(Tensor::zeros([4, 2]));
        let err = g.matmul(x, w).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn activations_at_reference_points() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new([3], vec![0.0, -3.2, 3.2]).unwrap());
        let s = g.sigmoid(x);
        let r = g.relu(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.2]);
        assert!("softplus".parse::<Activation>().is_err());
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn tanh_matches_libm_on_grid() {
        let xs: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new([xs.len()], xs.clone()).unwrap());
        let y = g.tanh(x);
        for (x, y) in xs.iter().zip(g.value(y).data()) {
            // (e^x - e^-x) / (e^x + e^-x)
            let reference = (x.exp() - (-x).exp()) / (x.exp() + (-x).exp());
            assert!((y - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_of_weights_has_unit_gradient() {
        let mut store = ParamStore::new();
        let w = store.add_param("w", Tensor::new([2, 2], vec![0.3, -1.0, 2.0, 5.0]).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum(wv);
        g.backward(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.get(w).grad(), Some(&[1.0; 4][..]));
    }

    #[test]
    fn backward_is_single_use() {
        let mut store = ParamStore::new();
        let w = store.add_param("w", Tensor::full([2], 1.0));
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum(wv);
        g.backward(loss, &mut [&mut store]).unwrap();
        assert!(matches!(g.backward(loss, &mut [&mut store]), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([2]));
        assert!(matches!(g.backward(x, &mut []), Err(Error::Contract(_))));
    }

    #[test]
    fn batchnorm_constant_column_outputs_beta() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new([3, 2], vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap());
        let gamma = g.input(Tensor::full([2], 1.0));
        let beta = g.input(Tensor::new([2], vec![0.25, 0.0]).unwrap());
        let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Train).unwrap();
        for i in 0..3 {
            assert_eq!(g.value(y).get(i, 0), 0.25);
        }
    }

    #[test]
    fn batchnorm_train_normalizes() {
        // Column variance ~ 400, so var / (var + eps) sits within 1e-6 of one.
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![20.0 * ((i * 7 % 16) as f64 - 7.5) / 4.6, 3.0 * i as f64]).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&rows).unwrap());
        let gamma = g.input(Tensor::full([2], 1.0));
        let beta = g.input(Tensor::zeros([2]));
        let (y, stats) = g.batchnorm(x, gamma, beta, BnMode::Train).unwrap();
        assert!(stats.is_some());
        let y = g.value(y);
        for j in 0..2 {
            let col: Vec<f64> = (0..16).map(|i| y.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / 16.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6, "variance {v}");
        }
    }

    #[test]
    fn batchnorm_eval_matches_scalar_formula() {
        let xs = [0.3, -1.2, 2.5, 0.0, 7.0, -3.0];
        let mean = [0.5, -0.25];
        let var = [2.0, 0.3];
        let gam = [1.5, -0.7];
        let bet = [0.1, 0.2];
        let mut g = Graph::new();
        let x = g.input(Tensor::new([3, 2], xs.to_vec()).unwrap());
        let gamma = g.input(Tensor::new([2], gam.to_vec()).unwrap());
        let beta = g.input(Tensor::new([2], bet.to_vec()).unwrap());
        let (y, stats) = g.batchnorm(x, gamma, beta, BnMode::Eval { mean: &mean, var: &var }).unwrap();
        assert!(stats.is_none());
        for i in 0..3 {
            for j in 0..2 {
                let expected = (xs[i * 2 + j] - mean[j]) / (var[j] + 1e-5f64).sqrt() * gam[j] + bet[j];
                assert!((g.value(y).get(i, j) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn batchnorm_empty_batch() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([0, 2]));
        let gamma = g.input(Tensor::full([2], 1.0));
        let beta = g.input(Tensor::zeros([2]));
        assert!(matches!(g.batchnorm(x, gamma, beta, BnMode::Train), Err(Error::EmptyBatch)));
    }

    #[test]
    fn abs_subgradient_zero_at_kink() {
        let mut store = ParamStore::new();
        let p = store.add_param("p", Tensor::new([3], vec![0.0, 2.0, -2.0]).unwrap());
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let a = g.abs(v);
        let loss = g.sum(a);
        g.backward(loss, &mut [&mut store]).unwrap();
        assert_eq!(store.get(p).grad().unwrap(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let p = store.add_param("p", Tensor::full([2], 3.0));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let d = g.detach(v);
        let prod = g.mul(v, d).unwrap();
        let loss = g.sum(prod);
        g.backward(loss, &mut [&mut store]).unwrap();
        // Only the non-detached factor contributes: d(p * const)/dp = 3.
        assert_eq!(store.get(p).grad().unwrap(), &[3.0, 3.0]);
    }
}
