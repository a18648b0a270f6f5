use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngExt;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named collection of tensors owned by one model.
///
/// Trainable entries receive gradients and optimizer updates. Buffers (batchnorm
/// running statistics) are saved with the model but never see gradients.
#[derive(Clone, Debug)]
pub struct ParamStore {
    uid: u64,
    entries: Vec<Entry>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.trainable == b.trainable && a.tensor.shape() == b.tensor.shape()
                    && a.tensor.data() == b.tensor.data()
            })
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(Entry { name, tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: [usize; 2], rng: &mut StreamRng) -> ParamId {
        let bound = 1.0 / (shape[0].max(1) as f64).sqrt();
        let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::new(shape, data).expect("shape matches generated data");
        self.add_param(name, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub fn num_trainable_values(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn max_abs_trainable(&self) -> f64 {
        self.entries.iter().filter(|e| e.trainable).fold(0.0, |m, e| m.max(e.tensor.max_abs()))
    }

    /// Overwrites the values of entry `id`, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = self.get_mut(id);
        if t.numel() != values.len() {
            return Err(Error::Dimension(format!(
                "parameter {} holds {} values, got {}",
                id.0,
                t.numel(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Dimension(format!(
                "store layouts differ: {} vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Dimension(format!(
                    "entry {} {:?} does not match {} {:?}",
                    dst.name,
                    dst.tensor.shape(),
                    src.name,
                    src.tensor.shape()
                )));
            }
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }
}
