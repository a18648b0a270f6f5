use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Which terms of the generator objective are switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoLength,
    NoSumm,
    /// Drops the random summary: `omega = 1` in both phases.
    TwoPlayer,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoLength, Ablation::NoSumm, Ablation::TwoPlayer];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoLength => "no-length",
            Ablation::NoSumm => "no-summ",
            Ablation::TwoPlayer => "two-player",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected none, no-length, no-summ or two-player")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the generated-summary term against the random-summary term.
    pub omega: f64,
    pub lr_generator: f64,
    pub lr_critic: f64,
    /// Decay of the squared-gradient average.
    pub rms_decay: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Critic weights are clamped to `[-clip, clip]` after every update.
    pub clip: f64,
    pub max_steps: u64,
    /// Successive shots per batch.
    pub segment_len: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub lambda_summ: f64,
    pub lambda_len: f64,
    /// Validation interval for best-generator selection; 0 disables it.
    pub eval_every: u64,
    /// Periodic checkpoint interval; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Score threshold used for validation F1.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            omega: 0.5,
            lr_generator: 1e-3,
            lr_critic: 5e-5,
            rms_decay: 0.99,
            n_critic: 5,
            clip: 0.01,
            max_steps: 2000,
            segment_len: 60,
            seed: 0,
            ablation: Ablation::None,
            lambda_summ: 1.0,
            lambda_len: 1.0,
            eval_every: 100,
            checkpoint_every: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// Published widths and 1000-shot batches.
    pub fn paper_scale() -> Self {
        TrainConfig { model: ModelConfig::paper_scale(), segment_len: 1000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("omega must lie in [0, 1], got {}", self.omega));
        }
        for (name, v) in [("lr_generator", self.lr_generator), ("lr_critic", self.lr_critic), ("clip", self.clip)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return bad(format!("rms_decay must lie in [0, 1), got {}", self.rms_decay));
        }
        for (name, v) in [("lambda_summ", self.lambda_summ), ("lambda_len", self.lambda_len)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1".into());
        }
        if self.segment_len == 0 {
            return bad("segment_len must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    /// `omega` after the ablation switch.
    pub fn effective_omega(&self) -> f64 {
        if self.ablation == Ablation::TwoPlayer {
            1.0
        } else {
            self.omega
        }
    }

    pub fn effective_lambda_summ(&self) -> f64 {
        if self.ablation == Ablation::NoSumm {
            0.0
        } else {
            self.lambda_summ
        }
    }

    pub fn effective_lambda_len(&self) -> f64 {
        if self.ablation == Ablation::NoLength {
            0.0
        } else {
            self.lambda_len
        }
    }
}
