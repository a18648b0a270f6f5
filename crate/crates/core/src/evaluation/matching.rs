use std::collections::BTreeSet;

use crate::dataset::ConceptId;
use crate::error::{Error, Result};

/// Intersection over union of two concept sets. Two empty sets score 0, so
/// unannotated shots never match anything.
pub fn iou(a: &[ConceptId], b: &[ConceptId]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Edge weights between generated shots (rows) and ground-truth shots (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingInstance {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl MatchingInstance {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::Dimension(format!("{rows}x{cols} matching needs {} weights, got {}", rows * cols, weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Contract(format!("matching weight {w} outside [0, 1]")));
        }
        Ok(MatchingInstance { rows, cols, weights })
    }

    /// Pairwise IoU between the concept sets of two shot lists.
    pub fn from_concepts(generated: &[&[ConceptId]], truth: &[&[ConceptId]]) -> Self {
        let weights = generated.iter().flat_map(|g| truth.iter().map(move |t| iou(g, t))).collect();
        MatchingInstance { rows: generated.len(), cols: truth.len(), weights }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    /// Sum of the weights of `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| self.weight(i, j)).sum()
    }
}

/// Maximum-weight bipartite matching by the Hungarian method on the
/// zero-padded square matrix. Among optimal matchings, ones with more
/// positive-weight pairs win; zero-weight pairs are dropped from the result.
/// Pairs come back sorted by row.
pub fn max_weight_matching(inst: &MatchingInstance) -> Vec<(usize, usize)> {
    let n = inst.rows.max(inst.cols);
    if inst.rows == 0 || inst.cols == 0 {
        return Vec::new();
    }
    // A bonus far below any real weight gap makes ties prefer more matches.
    let bonus = 1e-9 / n as f64;
    let cost = |i: usize, j: usize| -> f64 {
        if i < inst.rows && j < inst.cols {
            let w = inst.weight(i, j);
            if w > 0.0 {
                return -(w + bonus);
            }
        }
        0.0
    };

    // Potentials formulation, 1-based with column 0 as the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .map(|j| (owner[j] - 1, j - 1))
        .filter(|&(i, j)| i < inst.rows && j < inst.cols && inst.weight(i, j) > 0.0)
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Precision, recall and F1 of one summary.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `P = m / n_gen`, `R = m / n_gt`, F1 their harmonic mean; each is 0 when its
/// denominator is.
pub fn prf(n_matched: usize, n_gen: usize, n_gt: usize) -> Result<Prf> {
    if n_matched > n_gen.min(n_gt) {
        return Err(Error::Contract(format!("{n_matched} matches between {n_gen} generated and {n_gt} ground-truth shots")));
    }
    let ratio = |d: usize| if d == 0 { 0.0 } else { n_matched as f64 / d as f64 };
    let (precision, recall) = (ratio(n_gen), ratio(n_gt));
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(Prf { precision, recall, f1 })
}
