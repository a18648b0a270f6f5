//! The summary generator: query-conditioned fusion, Bi-LSTM encoding, per-shot
//! scoring and the temperature gate.

use std::ops::Range;

use rand::RngExt;

use crate::dataset::{embed_query, Corpus, Query};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{BatchNorm, BiLstm, Graph, Linear, Mode, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

/// Per-shot confidence scores, each in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceScores(pub Vec<f64>);

/// Gated scores `k_t = sigmoid((2 s_t - 1) / tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryMask(pub Vec<f64>);

/// Feature rows of a shot window and the embedded query.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotInputs {
    /// `T x d_frame`
    pub frame: Tensor,
    /// `T x d_shot`
    pub shot: Tensor,
    /// `1 x d_text`
    pub query: Tensor,
}

impl ShotInputs {
    pub fn from_corpus(corpus: &Corpus, video: usize, shots: Range<usize>, query: &Query) -> Result<Self> {
        let v = corpus
            .videos
            .get(video)
            .ok_or_else(|| Error::Contract(format!("video index {video} out of range")))?;
        if shots.start >= shots.end || shots.end > v.len() {
            return Err(Error::Contract(format!("shot range {shots:?} invalid for a video of {} shots", v.len())));
        }
        let n = shots.len();
        let frame = Tensor::new([n, corpus.d_frame], v.frame_feats.rows_f64(shots.start, shots.end))?;
        let shot = Tensor::new([n, corpus.d_shot], v.shot_feats.rows_f64(shots.start, shots.end))?;
        let q = embed_query(query, &corpus.concepts)?;
        let query = Tensor::new([1, q.len()], q)?;
        Ok(ShotInputs { frame, shot, query })
    }

    pub fn len(&self) -> usize {
        self.frame.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Graph handles produced by one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// Fused shot-query features, `T x (d_fused + d_qenc)`.
    pub f_vq: Var,
    /// Encoded shots, `T x 2h`.
    pub f_eq: Var,
    /// Scores, `T x 1`.
    pub scores: Var,
    /// Gated summary, `T x 1`.
    pub mask: Var,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub store: ParamStore,
    fuse_visual: Linear,
    fuse_text: Linear,
    encoder: BiLstm,
    encoder_bn: BatchNorm,
    fc1: Linear,
    bn1: BatchNorm,
    fc2: Linear,
}

impl Generator {
    pub fn new(config: &ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config;
        let fuse_visual = Linear::new(&mut store, "gen.fuse_visual", c.d_frame + c.d_shot, c.d_fused, rng);
        let fuse_text = Linear::new(&mut store, "gen.fuse_text", c.d_text, c.d_qenc, rng);
        let encoder = BiLstm::new(&mut store, "gen.encoder", c.d_video(), c.gen_hidden, rng);
        let encoder_bn = BatchNorm::new(&mut store, "gen.encoder_bn", c.d_encoded());
        let fc1 = Linear::new(&mut store, "gen.fc1", c.d_encoded(), c.predictor_hidden, rng);
        let bn1 = BatchNorm::new(&mut store, "gen.bn1", c.predictor_hidden);
        let fc2 = Linear::new(&mut store, "gen.fc2", c.predictor_hidden, 1, rng);
        Ok(Generator { config: c.clone(), store, fuse_visual, fuse_text, encoder, encoder_bn, fc1, bn1, fc2 })
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    /// Fuses visual and query features: `[relu(FC([frame, shot])), relu(FC(query))]`
    /// with the query half repeated on every row.
    pub fn fuse(&self, g: &mut Graph, frame: Var, shot: Var, query: Var) -> Result<Var> {
        let (tf, ts) = (g.value(frame), g.value(shot));
        if tf.rows() != ts.rows() {
            return Err(Error::Dimension(format!(
                "frame features have {} shots, shot features {}",
                tf.rows(),
                ts.rows()
            )));
        }
        let t_len = tf.rows();
        let visual = g.concat_cols(frame, shot)?;
        let visual = self.fuse_visual.forward(g, &self.store, visual)?;
        let visual = g.relu(visual);
        let text = self.fuse_text.forward(g, &self.store, query)?;
        let text = g.relu(text);
        let text = g.tile_rows(text, t_len)?;
        g.concat_cols(visual, text)
    }

    /// Bi-LSTM over shots, then batchnorm over time and ReLU.
    pub fn encode(&self, g: &mut Graph, f_vq: Var, mode: Mode) -> Result<Var> {
        let h = self.encoder.forward(g, &self.store, f_vq)?;
        let h = self.encoder_bn.forward(g, &self.store, h, mode)?;
        Ok(g.relu(h))
    }

    /// FC, batchnorm, ReLU, dropout (train mode only), FC, sigmoid; one score per shot.
    pub fn score(&self, g: &mut Graph, f_eq: Var, mode: Mode, dropout_rng: Option<&mut StreamRng>) -> Result<Var> {
        let x = self.fc1.forward(g, &self.store, f_eq)?;
        let x = self.bn1.forward(g, &self.store, x, mode)?;
        let mut x = g.relu(x);
        if mode == Mode::Train && self.config.dropout > 0.0 {
            let rng = dropout_rng.ok_or_else(|| Error::Contract("train-mode scoring needs a dropout stream".into()))?;
            let p = self.config.dropout;
            x = g.dropout(x, p, || rng.random::<f64>() >= p)?;
        }
        let x = self.fc2.forward(g, &self.store, x)?;
        Ok(g.sigmoid(x))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        inputs: &ShotInputs,
        mode: Mode,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<GeneratorOutput> {
        let frame = g.input(inputs.frame.clone());
        let shot = g.input(inputs.shot.clone());
        let query = g.input(inputs.query.clone());
        let f_vq = self.fuse(g, frame, shot, query)?;
        let f_eq = self.encode(g, f_vq, mode)?;
        let scores = self.score(g, f_eq, mode, dropout_rng)?;
        let mask = gate(g, scores, self.config.tau)?;
        Ok(GeneratorOutput { f_vq, f_eq, scores, mask })
    }

    /// Inference scores for a window, normalized as `config.inference_norm` says;
    /// never touches running statistics.
    pub fn predict(&self, inputs: &ShotInputs) -> Result<ConfidenceScores> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, inputs, self.config.inference_norm.mode(), None)?;
        Ok(ConfidenceScores(g.value(out.scores).data().to_vec()))
    }
}

/// Records `k = sigmoid((2s - 1) / tau)`, the overflow-free form of
/// `e^{s/tau} / (e^{s/tau} + e^{(1-s)/tau})`.
pub fn gate(g: &mut Graph, scores: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let z = g.scale(scores, 2.0 / tau);
    let z = g.add_scalar(z, -1.0 / tau);
    Ok(g.sigmoid(z))
}

/// Applies the gate to plain scores.
pub fn gate_scores(s: &ConfidenceScores, tau: f64) -> Result<SummaryMask> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(SummaryMask(s.0.iter().map(|&x| crate::numerics::sigmoid((2.0 * x - 1.0) / tau)).collect()))
}

/// Shot `t` is selected iff `s_t > threshold`.
pub fn select_shots(s: &ConfidenceScores, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(s.0.iter().map(|&x| x > threshold).collect())
}

/// Selects the `count` highest-scoring shots; ties go to the earlier shot.
pub fn select_top(s: &ConfidenceScores, count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..s.0.len()).collect();
    order.sort_by(|&a, &b| s.0[b].total_cmp(&s.0[a]).then(a.cmp(&b)));
    let mut out = vec![false; s.0.len()];
    for &i in order.iter().take(count) {
        out[i] = true;
    }
    out
}
