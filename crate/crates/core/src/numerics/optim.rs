use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

const RMS_EPS: f64 = 1e-8;

/// Squared-gradient running averages, one buffer per entry of a store
/// (buffers of non-trainable entries stay empty).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub accumulators: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn for_store(store: &ParamStore) -> Self {
        let accumulators = store
            .ids()
            .map(|id| if store.is_trainable(id) { vec![0.0; store.get(id).numel()] } else { Vec::new() })
            .collect();
        OptimizerState { accumulators, step: 0 }
    }
}

/// RMSProp update using the gradients currently held by `store`:
/// `acc = decay*acc + (1-decay)*g^2`, `theta -= lr * g / sqrt(acc + 1e-8)`.
/// Entries without a gradient are treated as having a zero gradient. Gradients
/// are cleared afterwards.
pub fn rmsprop_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64, decay: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Config(format!("decay must lie in [0, 1), got {decay}")));
    }
    if state.accumulators.len() != store.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} entries, store has {}",
            state.accumulators.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in &ids {
        if let Some(g) = store.get(*id).grad() {
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("gradient of {} at index {bad} is {}", store.name(*id), g[bad])));
            }
        }
    }
    for id in ids {
        let acc = &mut state.accumulators[id.index()];
        let t = store.get_mut(id);
        if acc.len() != t.numel() {
            return Err(Error::Dimension(format!("accumulator {} has wrong length", id.index())));
        }
        let grad = t.take_grad();
        match grad {
            Some(g) => {
                for ((p, a), g) in t.data_mut().iter_mut().zip(acc.iter_mut()).zip(&g) {
                    *a = decay * *a + (1.0 - decay) * g * g;
                    *p -= lr * g / (*a + RMS_EPS).sqrt();
                }
            }
            None => acc.iter_mut().for_each(|a| *a *= decay),
        }
    }
    state.step += 1;
    Ok(())
}

/// Clamps every trainable entry of `store` into `[-c, c]`.
pub fn clip_weights(store: &mut ParamStore, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("clip constant must be positive, got {c}")));
    }
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
    Ok(())
}
