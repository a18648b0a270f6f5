//! Parameterized layers: each one owns `ParamId`s into a [`ParamStore`] and
//! records itself onto a [`Graph`].

use super::graph::{BnMode, Graph, LstmVars, Var, BN_MOMENTUM};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    /// Batch statistics without running-average updates, no dropout.
    Sequence,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut StreamRng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), [d_in, d_out], rng);
        let b = store.add_param(format!("{name}.b"), Tensor::zeros([d_out]));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        BatchNorm {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full([d], 1.0)),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros([d])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([d])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full([d], 1.0)),
        }
    }

    /// Train mode normalizes with batch statistics and defers the running-average
    /// update (`r = 0.9 r + 0.1 batch`) until the graph commits buffers.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batchnorm(x, gamma, beta, BnMode::Train)?;
                let stats = stats.expect("train mode reports batch statistics");
                let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
                    old.iter().zip(new).map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n).collect()
                };
                let mean = blend(store.get(self.running_mean).data(), &stats.mean);
                let var = blend(store.get(self.running_var).data(), &stats.var);
                g.defer_buffer_update(store, self.running_mean, mean);
                g.defer_buffer_update(store, self.running_var, var);
                Ok(y)
            }
            Mode::Sequence => Ok(g.batchnorm(x, gamma, beta, BnMode::Train)?.0),
            Mode::Eval => {
                let mean = store.get(self.running_mean).data();
                let var = store.get(self.running_var).data();
                let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Eval { mean, var })?;
                Ok(y)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl Lstm {
    /// Forget-gate bias starts at +1, other biases at zero.
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut StreamRng) -> Self {
        let w_x = store.add_uniform(format!("{name}.w_x"), [d_in, 4 * hidden], rng);
        let w_h = store.add_uniform(format!("{name}.w_h"), [hidden, 4 * hidden], rng);
        let mut bias = Tensor::zeros([4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add_param(format!("{name}.b"), bias);
        Lstm { w_x, w_h, b }
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.get(self.w_h).rows()
    }

    fn bind(&self, g: &mut Graph, store: &ParamStore) -> LstmVars {
        LstmVars { w_x: g.param(store, self.w_x), w_h: g.param(store, self.w_h), b: g.param(store, self.b) }
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut StreamRng) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let f = self.fwd.bind(g, store);
        let b = self.bwd.bind(g, store);
        g.bilstm(x, f, b)
    }
}
