use rand::seq::index;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Most coordinates probed by one check; larger parameter sets are subsampled.
pub const MAX_PROBED: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `store/parameter[index]` of the worst coordinate.
    pub worst: String,
    pub probed: usize,
}

fn evaluate<F>(stores: &[&mut ParamStore], f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[&ParamStore]) -> Result<Var>,
{
    let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
    let mut g = Graph::new();
    let loss = f(&mut g, &refs)?;
    let t = g.value(loss);
    if t.numel() != 1 {
        return Err(Error::Contract(format!("loss must be a scalar, got shape {:?}", t.shape())));
    }
    let v = t.data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences `(f(θ+eps) - f(θ-eps)) / 2eps`, coordinate by coordinate.
///
/// `f` must be a pure function of the store values: any randomness it uses has
/// to be reseeded on every call. Relative error uses `max(|a|, |b|, 1e-6)` as the
/// denominator. Store values are restored and gradients cleared on return.
pub fn grad_check<F>(stores: &mut [&mut ParamStore], eps: f64, seed: u64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[&ParamStore]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    stores.iter_mut().for_each(|s| s.zero_grads());
    {
        let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let mut g = Graph::new();
        let loss = f(&mut g, &refs)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        drop(refs);
        g.backward(loss, stores)?;
    }

    let mut coords: Vec<(usize, ParamId, usize)> = Vec::new();
    for (si, s) in stores.iter().enumerate() {
        for id in s.trainable_ids() {
            coords.extend((0..s.get(id).numel()).map(|k| (si, id, k)));
        }
    }
    if coords.len() > MAX_PROBED {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, coords.len(), MAX_PROBED).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: String::new(), probed: coords.len() };
    for (si, id, k) in coords {
        let analytic = stores[si].get(id).grad().map_or(0.0, |g| g[k]);
        let original = stores[si].get(id).data()[k];
        stores[si].get_mut(id).data_mut()[k] = original + eps;
        let plus = evaluate(stores, &mut f);
        stores[si].get_mut(id).data_mut()[k] = original - eps;
        let minus = evaluate(stores, &mut f);
        stores[si].get_mut(id).data_mut()[k] = original;
        let numeric = (plus? - minus?) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = report.max_relative_error.max(rel);
            if rel >= report.max_relative_error {
                report.worst = format!("{si}/{}[{k}]", stores[si].name(id));
            }
        }
    }
    stores.iter_mut().for_each(|s| s.zero_grads());
    Ok(report)
}
