use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mode;

/// Normalization statistics used by the generator at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceNorm {
    /// Each video is normalized with its own statistics over time, as in training.
    #[default]
    Sequence,
    /// Running averages accumulated during training.
    Running,
}

impl InferenceNorm {
    pub fn mode(self) -> Mode {
        match self {
            InferenceNorm::Sequence => Mode::Sequence,
            InferenceNorm::Running => Mode::Eval,
        }
    }
}

/// Layer widths of the generator and critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_frame: usize,
    pub d_shot: usize,
    pub d_text: usize,
    /// Width of the fused visual feature.
    pub d_fused: usize,
    /// Width of the encoded query.
    pub d_qenc: usize,
    /// Generator Bi-LSTM hidden size per direction.
    pub gen_hidden: usize,
    /// Width of the first score-predictor layer.
    pub predictor_hidden: usize,
    pub dropout: f64,
    /// Gate temperature.
    pub tau: f64,
    /// Critic Bi-LSTM hidden size per direction (both branches).
    pub critic_hidden: usize,
    /// Widths of the critic's three hidden fully connected layers.
    pub critic_widths: [usize; 3],
    pub inference_norm: InferenceNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_frame: 32,
            d_shot: 48,
            d_text: 16,
            d_fused: 64,
            d_qenc: 16,
            gen_hidden: 32,
            predictor_hidden: 32,
            dropout: 0.5,
            tau: 0.1,
            critic_hidden: 16,
            critic_widths: [64, 32, 16],
            inference_norm: InferenceNorm::Sequence,
        }
    }
}

impl ModelConfig {
    /// Published widths: 2048/4096/300-d inputs, a 2048-d Bi-LSTM encoding, a
    /// 128-d predictor layer, a 512-d critic encoding and a 512/256/128 critic head.
    pub fn paper_scale() -> Self {
        ModelConfig {
            d_frame: 2048,
            d_shot: 4096,
            d_text: 300,
            d_fused: 1024,
            d_qenc: 300,
            gen_hidden: 1024,
            predictor_hidden: 128,
            critic_hidden: 256,
            critic_widths: [512, 256, 128],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_frame", self.d_frame),
            ("d_shot", self.d_shot),
            ("d_text", self.d_text),
            ("d_fused", self.d_fused),
            ("d_qenc", self.d_qenc),
            ("gen_hidden", self.gen_hidden),
            ("predictor_hidden", self.predictor_hidden),
            ("critic_hidden", self.critic_hidden),
        ];
        for (name, v) in widths.into_iter().chain(self.critic_widths.iter().map(|w| ("critic_widths", *w))) {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Width of a fused shot-query row.
    pub fn d_video(&self) -> usize {
        self.d_fused + self.d_qenc
    }

    /// Width of an encoded shot.
    pub fn d_encoded(&self) -> usize {
        2 * self.gen_hidden
    }
}
