//! LSTM recurrence and its backpropagation through time.
//!
//! Gate pre-activations are laid out as four blocks of width `h`:
//! input, forget, candidate, output.

use super::graph::sigmoid;
use super::tensor::{gemm, gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Borrowed weights of one LSTM direction.
#[derive(Clone, Copy)]
pub struct LstmRef<'a> {
    pub w_x: &'a Tensor,
    pub w_h: &'a Tensor,
    pub b: &'a Tensor,
}

impl LstmRef<'_> {
    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    pub fn check(&self, d_in: usize) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_x.shape() == [d_in, 4 * h] && self.w_h.shape() == [h, 4 * h] && self.b.numel() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "LSTM weights {:?}/{:?}/{:?} do not fit input width {d_in}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.shape()
            )))
        }
    }
}

/// Activations saved by the forward recurrence, indexed by time step.
pub struct LstmCache {
    pub hidden: usize,
    pub reverse: bool,
    /// Activated gates `[T x 4h]`: i, f, g, o.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Hidden outputs `[T x h]`.
    pub h: Vec<f64>,
}

pub struct LstmGrads {
    pub dx: Vec<f64>,
    pub dw_x: Vec<f64>,
    pub dw_h: Vec<f64>,
    pub db: Vec<f64>,
}

/// Applies the gate nonlinearities in place and advances the cell state.
#[inline]
fn cell_update(z: &mut [f64], c_prev: &[f64], c: &mut [f64], tanh_c: &mut [f64], h_out: &mut [f64]) {
    let h = c_prev.len();
    for j in 0..h {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[h + j]);
        let g = z[2 * h + j].tanh();
        let o = sigmoid(z[3 * h + j]);
        z[j] = i;
        z[h + j] = f;
        z[2 * h + j] = g;
        z[3 * h + j] = o;
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h_out[j] = o * tanh_c[j];
    }
}

/// One LSTM step: `i, f, o = sigmoid`, `g = tanh`, `c = f*c_prev + i*g`, `h = o*tanh(c)`.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], w: LstmRef<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    w.check(x.len())?;
    let h = w.hidden();
    if h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Dimension(format!(
            "state lengths {}/{} do not match hidden size {h}",
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut z = w.b.data().to_vec();
    gemm_strided(1, x.len(), 4 * h, x, (x.len() as isize, 1), w.w_x.data(), (4 * h as isize, 1), &mut z, 1.0);
    gemm_strided(1, h, 4 * h, h_prev, (h as isize, 1), w.w_h.data(), (4 * h as isize, 1), &mut z, 1.0);
    let (mut c, mut tc, mut h_out) = (vec![0.0; h], vec![0.0; h], vec![0.0; h]);
    cell_update(&mut z, c_prev, &mut c, &mut tc, &mut h_out);
    Ok((h_out, c))
}

/// Runs one direction over all rows of `x`, from zero state.
pub(crate) fn run_direction(x: &Tensor, w: &LstmRef<'_>, reverse: bool) -> LstmCache {
    let (t_len, d_in) = (x.rows(), x.cols());
    let h = w.hidden();
    let h4 = 4 * h;
    // Input projections for every step at once: P = X W_x + b.
    let mut gates = vec![0.0; t_len * h4];
    gemm(t_len, d_in, h4, x.data(), w.w_x.data(), &mut gates);
    for row in gates.chunks_mut(h4) {
        row.iter_mut().zip(w.b.data()).for_each(|(p, b)| *p += b);
    }
    let mut cache = LstmCache {
        hidden: h,
        reverse,
        gates,
        c: vec![0.0; t_len * h],
        tanh_c: vec![0.0; t_len * h],
        h_prev: vec![0.0; t_len * h],
        c_prev: vec![0.0; t_len * h],
        h: vec![0.0; t_len * h],
    };
    let mut h_state = vec![0.0; h];
    let mut c_state = vec![0.0; h];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        cache.h_prev[t * h..(t + 1) * h].copy_from_slice(&h_state);
        cache.c_prev[t * h..(t + 1) * h].copy_from_slice(&c_state);
        let z = &mut cache.gates[t * h4..(t + 1) * h4];
        gemm_strided(1, h, h4, &h_state, (h as isize, 1), w.w_h.data(), (h4 as isize, 1), z, 1.0);
        cell_update(
            z,
            &c_state,
            &mut cache.c[t * h..(t + 1) * h],
            &mut cache.tanh_c[t * h..(t + 1) * h],
            &mut cache.h[t * h..(t + 1) * h],
        );
        h_state.copy_from_slice(&cache.h[t * h..(t + 1) * h]);
        c_state.copy_from_slice(&cache.c[t * h..(t + 1) * h]);
    }
    cache
}

/// Backpropagation through time for one direction. `dh_out` is the upstream
/// gradient of the hidden outputs, `[T x h]`.
pub(crate) fn backprop_direction(x: &Tensor, w: &LstmRef<'_>, cache: &LstmCache, dh_out: &[f64]) -> LstmGrads {
    let (t_len, d_in) = (x.rows(), x.cols());
    let h = cache.hidden;
    let h4 = 4 * h;
    let mut dz = vec![0.0; t_len * h4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for step in (0..t_len).rev() {
        let t = if cache.reverse { t_len - 1 - step } else { step };
        let gates = &cache.gates[t * h4..(t + 1) * h4];
        let dzt = &mut dz[t * h4..(t + 1) * h4];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = cache.tanh_c[t * h + j];
            let dh = dh_out[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * cache.c_prev[t * h + j];
            dc_next[j] = dc * f;
            dzt[j] = d_i * i * (1.0 - i);
            dzt[h + j] = d_f * f * (1.0 - f);
            dzt[2 * h + j] = d_g * (1.0 - g * g);
            dzt[3 * h + j] = d_o * o * (1.0 - o);
        }
        // dh_prev = dz_t W_h^T
        gemm_strided(1, h4, h, dzt, (h4 as isize, 1), w.w_h.data(), (1, h4 as isize), &mut dh_next, 0.0);
    }
    // dW_x = X^T dZ, dW_h = H_prev^T dZ, dX = dZ W_x^T
    let mut dw_x = vec![0.0; d_in * h4];
    gemm_strided(d_in, t_len, h4, x.data(), (1, d_in as isize), &dz, (h4 as isize, 1), &mut dw_x, 0.0);
    let mut dw_h = vec![0.0; h * h4];
    gemm_strided(h, t_len, h4, &cache.h_prev, (1, h as isize), &dz, (h4 as isize, 1), &mut dw_h, 0.0);
    let mut dx = vec![0.0; t_len * d_in];
    gemm_strided(t_len, h4, d_in, &dz, (h4 as isize, 1), w.w_x.data(), (1, h4 as isize), &mut dx, 0.0);
    let mut db = vec![0.0; h4];
    for row in dz.chunks(h4) {
        db.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    LstmGrads { dx, dw_x, dw_h, db }
}

#[cfg(test)]
mod tests {
    use rand::{RngExt, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    use super::*;

    fn random(shape: [usize; 2], rng: &mut Xoshiro256PlusPlus) -> Tensor {
        Tensor::new(shape, (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let (wx, wh, b) = (Tensor::zeros([3, 8]), Tensor::zeros([2, 8]), Tensor::zeros([8]));
        let w = LstmRef { w_x: &wx, w_h: &wh, b: &b };
        let (h, c) = lstm_cell(&[0.0; 3], &[0.0; 2], &[0.0; 2], w).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let h = 3;
        let (wx, wh) = (Tensor::zeros([2, 4 * h]), Tensor::zeros([h, 4 * h]));
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(50.0);
        let b = Tensor::new([4 * h], bias).unwrap();
        let w = LstmRef { w_x: &wx, w_h: &wh, b: &b };
        let c_prev = [0.7, -1.3, 2.2];
        let (_, c) = lstm_cell(&[0.0; 2], &[0.0; 3], &c_prev, w).unwrap();
        for (a, b) in c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let (d, h) = (5, 4);
        let wx = random([d, 4 * h], &mut rng);
        let wh = random([h, 4 * h], &mut rng);
        let b = random([1, 4 * h], &mut rng).reshape([4 * h]).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hp: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cp: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (h_t, c_t) = lstm_cell(&x, &hp, &cp, LstmRef { w_x: &wx, w_h: &wh, b: &b }).unwrap();
        for j in 0..h {
            let pre = |gate: usize| {
                let col = gate * h + j;
                let mut s = b.data()[col];
                for k in 0..d {
                    s += x[k] * wx.get(k, col);
                }
                for k in 0..h {
                    s += hp[k] * wh.get(k, col);
                }
                s
            };
            let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c = f * cp[j] + i * g;
            assert!((c_t[j] - c).abs() < 1e-12);
            assert!((h_t[j] - o * c.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_rejects_bad_state() {
        let (wx, wh, b) = (Tensor::zeros([3, 8]), Tensor::zeros([2, 8]), Tensor::zeros([8]));
        let w = LstmRef { w_x: &wx, w_h: &wh, b: &b };
        assert!(matches!(lstm_cell(&[0.0; 3], &[0.0; 3], &[0.0; 2], w), Err(Error::Dimension(_))));
        assert!(matches!(lstm_cell(&[0.0; 4], &[0.0; 2], &[0.0; 2], w), Err(Error::Dimension(_))));
    }

    #[test]
    fn direction_matches_repeated_cells() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let (t_len, d, h) = (6, 3, 2);
        let x = random([t_len, d], &mut rng);
        let wx = random([d, 4 * h], &mut rng);
        let wh = random([h, 4 * h], &mut rng);
        let b = Tensor::zeros([4 * h]);
        let w = LstmRef { w_x: &wx, w_h: &wh, b: &b };
        for reverse in [false, true] {
            let cache = run_direction(&x, &w, reverse);
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            for step in 0..t_len {
                let t = if reverse { t_len - 1 - step } else { step };
                (hs, cs) = lstm_cell(x.row(t), &hs, &cs, w).unwrap();
                for j in 0..h {
                    assert!((cache.h[t * h + j] - hs[j]).abs() < 1e-12);
                }
            }
        }
    }
}
