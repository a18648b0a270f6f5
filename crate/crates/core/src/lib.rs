//! Query-conditioned video summarization with a three-player adversarial network.
//!
//! A generator fuses per-shot visual features with a two-concept text query and
//! scores every shot; a Wasserstein critic compares the generated summary
//! against the ground-truth summary and a random one. Evaluation matches
//! predicted and ground-truth key shots by maximum-weight bipartite matching on
//! concept IoU.

pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
mod io;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};
pub use io::write_atomic;
pub use numerics::{Graph, ParamStore, Tensor, Var};
