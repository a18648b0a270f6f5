//! Dense `f64` tensors, a reverse-mode tape, and the layers built on it.

mod gradcheck;
mod graph;
mod layers;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, MAX_PROBED};
pub use graph::{sigmoid, Activation, BatchStats, BnMode, Graph, LstmVars, Var, BN_EPS, BN_MOMENTUM};
pub use layers::{BatchNorm, BiLstm, Linear, Lstm, Mode};
pub use lstm::{lstm_cell, LstmRef};
pub use optim::{clip_weights, rmsprop_step, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
