//! The Wasserstein critic over (summary, video) pairs.
//!
//! The video branch encodes the fused shot-query features; the summary branch
//! encodes a score-weighted copy of the generator's shot encoding. Both are
//! Bi-LSTM, batchnorm, ReLU and a mean over time. The two codes are
//! concatenated and passed through three ReLU layers and a linear output. The
//! same network scores the generated, ground-truth and random summaries.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngExt;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{BatchNorm, BiLstm, Graph, Linear, Mode, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SummarySource {
    Generated,
    GroundTruth,
    Random,
}

impl SummarySource {
    pub const ALL: [SummarySource; 3] = [SummarySource::Generated, SummarySource::GroundTruth, SummarySource::Random];

    fn index(self) -> usize {
        self as usize
    }
}

/// Encoded shots scaled row-wise by one score vector.
#[derive(Clone, Copy, Debug)]
pub struct SummaryRepresentation {
    pub seq: Var,
    pub source: SummarySource,
}

/// `out[t, :] = scores[t] * f_eq[t, :]`. `scores` is any `T`-element variable.
pub fn summary_repr(g: &mut Graph, f_eq: Var, scores: Var, source: SummarySource) -> Result<SummaryRepresentation> {
    if g.value(scores).data().iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Contract("summary scores must lie in [0, 1]".into()));
    }
    let seq = g.scale_rows(f_eq, scores)?;
    Ok(SummaryRepresentation { seq, source })
}

/// Fair coin per shot.
pub fn random_scores(t: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..t).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug)]
pub struct Critic {
    pub store: ParamStore,
    video_lstm: BiLstm,
    video_bn: BatchNorm,
    summary_lstm: BiLstm,
    summary_bn: BatchNorm,
    hidden: [Linear; 3],
    out: Linear,
    evaluations: [AtomicU64; 3],
}

impl Clone for Critic {
    fn clone(&self) -> Self {
        Critic {
            store: self.store.clone(),
            video_lstm: self.video_lstm.clone(),
            video_bn: self.video_bn.clone(),
            summary_lstm: self.summary_lstm.clone(),
            summary_bn: self.summary_bn.clone(),
            hidden: self.hidden.clone(),
            out: self.out.clone(),
            evaluations: self.evaluation_counts().map(AtomicU64::new),
        }
    }
}

impl Critic {
    pub fn new(config: &ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let h = c.critic_hidden;
        let mut store = ParamStore::new();
        let video_lstm = BiLstm::new(&mut store, "critic.video", c.d_video(), h, rng);
        let video_bn = BatchNorm::new(&mut store, "critic.video_bn", 2 * h);
        let summary_lstm = BiLstm::new(&mut store, "critic.summary", c.d_encoded(), h, rng);
        let summary_bn = BatchNorm::new(&mut store, "critic.summary_bn", 2 * h);
        let [w1, w2, w3] = c.critic_widths;
        let hidden = [
            Linear::new(&mut store, "critic.fc1", 4 * h, w1, rng),
            Linear::new(&mut store, "critic.fc2", w1, w2, rng),
            Linear::new(&mut store, "critic.fc3", w2, w3, rng),
        ];
        let out = Linear::new(&mut store, "critic.out", w3, 1, rng);
        Ok(Critic {
            store,
            video_lstm,
            video_bn,
            summary_lstm,
            summary_bn,
            hidden,
            out,
            evaluations: Default::default(),
        })
    }

    fn branch(&self, g: &mut Graph, lstm: &BiLstm, bn: &BatchNorm, x: Var, mode: Mode) -> Result<Var> {
        let h = lstm.forward(g, &self.store, x)?;
        let h = bn.forward(g, &self.store, h, mode)?;
        let h = g.relu(h);
        Ok(g.mean_rows(h))
    }

    /// Pooled code of the fused video features, `1 x 2h`.
    pub fn encode_video(&self, g: &mut Graph, f_vq: Var, mode: Mode) -> Result<Var> {
        self.branch(g, &self.video_lstm, &self.video_bn, f_vq, mode)
    }

    /// Unbounded score of one summary against a pre-encoded video.
    pub fn score(&self, g: &mut Graph, summ: SummaryRepresentation, video_code: Var, mode: Mode) -> Result<Var> {
        self.evaluations[summ.source.index()].fetch_add(1, Ordering::Relaxed);
        let u = self.branch(g, &self.summary_lstm, &self.summary_bn, summ.seq, mode)?;
        let mut x = g.concat_cols(u, video_code)?;
        for layer in &self.hidden {
            x = layer.forward(g, &self.store, x)?;
            x = g.relu(x);
        }
        self.out.forward(g, &self.store, x)
    }

    /// `D(summary, video)` for one pair.
    pub fn critic(&self, g: &mut Graph, summ: SummaryRepresentation, f_vq: Var, mode: Mode) -> Result<Var> {
        let (ts, tv) = (g.value(summ.seq), g.value(f_vq));
        if ts.rows() != tv.rows() {
            return Err(Error::Dimension(format!("summary has {} shots, video {}", ts.rows(), tv.rows())));
        }
        let v = self.encode_video(g, f_vq, mode)?;
        self.score(g, summ, v, mode)
    }

    /// How many summaries of each source were scored: generated, ground-truth, random.
    pub fn evaluation_counts(&self) -> [u64; 3] {
        SummarySource::ALL.map(|s| self.evaluations[s.index()].load(Ordering::Relaxed))
    }

    pub fn evaluations_of(&self, source: SummarySource) -> u64 {
        self.evaluations[source.index()].load(Ordering::Relaxed)
    }
}

/// Plain scores as a `T x 1` graph constant.
pub fn scores_input(g: &mut Graph, scores: &[f64]) -> Var {
    g.input(Tensor::new([scores.len(), 1], scores.to_vec()).expect("column"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_fused: 3,
            d_qenc: 2,
            gen_hidden: 2,
            critic_hidden: 3,
            critic_widths: [6, 5, 4],
            ..Default::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = stream(seed, Stream::Eval);
        Tensor::new([rows, cols], (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn summary_scaling() {
        let mut g = Graph::new();
        let f = g.input(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = scores_input(&mut g, &[1.0, 1.0]);
        let zeros = scores_input(&mut g, &[0.0, 0.0]);
        let mixed = scores_input(&mut g, &[0.5, 1.0]);
        let a = summary_repr(&mut g, f, ones, SummarySource::GroundTruth).unwrap();
        let b = summary_repr(&mut g, f, zeros, SummarySource::Random).unwrap();
        let c = summary_repr(&mut g, f, mixed, SummarySource::Generated).unwrap();
        assert_eq!(g.value(a.seq).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.value(b.seq).data(), &[0.0; 4]);
        assert_eq!(g.value(c.seq).data(), &[0.5, 1.0, 3.0, 4.0]);
        let short = scores_input(&mut g, &[1.0]);
        assert!(matches!(summary_repr(&mut g, f, short, SummarySource::Random), Err(Error::Dimension(_))));
        let bad = scores_input(&mut g, &[1.5, 0.0]);
        assert!(summary_repr(&mut g, f, bad, SummarySource::Random).is_err());
    }

    #[test]
    fn random_scores_are_binary() {
        let mut r = stream(0, Stream::RandomSummary);
        for t in [1, 5, 64] {
            let s = random_scores(t, &mut r);
            assert_eq!(s.len(), t);
            assert!(s.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }

    #[test]
    fn critic_emits_one_finite_deterministic_scalar() {
        let cfg = tiny();
        let critic = Critic::new(&cfg, &mut stream(2, Stream::Init)).unwrap();
        let f_vq = random(6, cfg.d_video(), 1);
        let f_eq = random(6, cfg.d_encoded(), 2);
        let run = |mode| {
            let mut g = Graph::new();
            let v = g.input(f_vq.clone());
            let e = g.input(f_eq.clone());
            let s = scores_input(&mut g, &[0.2, 0.9, 0.0, 1.0, 0.5, 0.5]);
            let summ = summary_repr(&mut g, e, s, SummarySource::Generated).unwrap();
            let d = critic.critic(&mut g, summ, v, mode).unwrap();
            assert_eq!(g.value(d).numel(), 1);
            g.scalar(d)
        };
        let a = run(Mode::Eval);
        assert!(a.is_finite());
        assert_eq!(a, run(Mode::Eval));
        assert!(run(Mode::Train).is_finite());
        assert_eq!(critic.evaluation_counts(), [3, 0, 0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = tiny();
        let mut critic = Critic::new(&cfg, &mut stream(2, Stream::Init)).unwrap();
        let ids: Vec<_> = critic.store.trainable_ids().collect();
        for id in ids {
            let n = critic.store.get(id).numel();
            critic.store.set_values(id, &vec![0.0; n]).unwrap();
        }
        for seed in 0..3 {
            let mut g = Graph::new();
            let v = g.input(random(4, cfg.d_video(), seed));
            let e = g.input(random(4, cfg.d_encoded(), seed + 10));
            let s = scores_input(&mut g, &[1.0, 0.0, 1.0, 1.0]);
            let summ = summary_repr(&mut g, e, s, SummarySource::GroundTruth).unwrap();
            let d = critic.critic(&mut g, summ, v, Mode::Train).unwrap();
            assert_eq!(g.scalar(d), 0.0);
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let cfg = tiny();
        let critic = Critic::new(&cfg, &mut stream(2, Stream::Init)).unwrap();
        let mut g = Graph::new();
        let v = g.input(random(4, cfg.d_video(), 1));
        let e = g.input(random(5, cfg.d_encoded(), 1));
        let s = scores_input(&mut g, &[1.0; 5]);
        let summ = summary_repr(&mut g, e, s, SummarySource::GroundTruth).unwrap();
        assert!(matches!(critic.critic(&mut g, summ, v, Mode::Eval), Err(Error::Dimension(_))));
    }
}
