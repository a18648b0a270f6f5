//! Losses, the alternating critic/generator loop, checkpoints and ablations.

mod checkpoint;
mod config;
mod losses;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, BestSnapshot, Checkpoint, TrainRngs, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Ablation, TrainConfig};
pub use losses::{adversarial_losses, critic_objective, loss_length, loss_summ, AdversarialLosses};

use std::fmt::Write as _;

use crate::dataset::{sample_batch, Corpus, Split, TrainingBatch};
use crate::discriminator::{random_scores, scores_input, summary_repr, SummarySource};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Selection};
use crate::generator::ShotInputs;
use crate::numerics::{clip_weights, rmsprop_step, Graph, Mode, Tensor, Var};

pub const METRICS_HEADER: &str = "step,critic_loss,gen_adv,loss_summ,loss_length,total_gen\n";

/// One metrics row. Generator terms are logged already weighted, so
/// `total_gen == gen_adv + loss_summ + loss_length`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    /// Mean over the critic updates of this step.
    pub critic_loss: f64,
    pub gen_adv: f64,
    pub loss_summ: f64,
    pub loss_length: f64,
    pub total_gen: f64,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}\n",
            self.step, self.critic_loss, self.gen_adv, self.loss_summ, self.loss_length, self.total_gen
        )
    }
}

fn finite(step: u64, term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("step {step}: {term} is {v}")))
    }
}

/// Owns the training state and advances it one generator step at a time.
#[derive(Debug)]
pub struct Trainer {
    train: Corpus,
    val: Corpus,
    state: Checkpoint,
}

impl Trainer {
    pub fn new(corpus: &Corpus, config: TrainConfig) -> Result<Self> {
        Trainer::resume(corpus, Checkpoint::initial(config)?)
    }

    pub fn resume(corpus: &Corpus, state: Checkpoint) -> Result<Self> {
        state.config.validate()?;
        let m = &state.config.model;
        if (corpus.d_frame, corpus.d_shot, corpus.d_text()) != (m.d_frame, m.d_shot, m.d_text) {
            return Err(Error::Dimension(format!(
                "corpus features are {}/{}/{}, the model expects {}/{}/{}",
                corpus.d_frame,
                corpus.d_shot,
                corpus.d_text(),
                m.d_frame,
                m.d_shot,
                m.d_text
            )));
        }
        let train = corpus.subset(Split::Train);
        if train.videos.iter().all(|v| v.queries.is_empty()) {
            return Err(Error::Contract("corpus has no queried training videos".into()));
        }
        let val = corpus.subset(Split::Val);
        Ok(Trainer { train, val, state })
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_state(self) -> Checkpoint {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    fn batch(&mut self) -> Result<(TrainingBatch, ShotInputs)> {
        let b = sample_batch(&self.train, &mut self.state.rngs.sampling, self.state.config.segment_len)?;
        let inputs = ShotInputs::from_corpus(&self.train, b.video, b.start..b.start + b.len, &b.query)?;
        Ok((b, inputs))
    }

    /// One critic update on a fresh batch; returns the critic loss `-L`.
    pub fn critic_update(&mut self) -> Result<f64> {
        let (batch, inputs) = self.batch()?;
        let step = self.state.step + 1;
        let omega = self.state.config.effective_omega();
        let st = &mut self.state;
        let mut g = Graph::new();
        let out = st.generator.forward(&mut g, &inputs, Mode::Train, Some(&mut st.rngs.dropout))?;
        let f_vq = g.detach(out.f_vq);
        let f_eq = g.detach(out.f_eq);
        let q_scores = g.detach(out.scores);
        let gt_scores = scores_input(&mut g, &batch.gt);

        let video = st.critic.encode_video(&mut g, f_vq, Mode::Train)?;
        let g_summ = summary_repr(&mut g, f_eq, gt_scores, SummarySource::GroundTruth)?;
        let q_summ = summary_repr(&mut g, f_eq, q_scores, SummarySource::Generated)?;
        let d_g = st.critic.score(&mut g, g_summ, video, Mode::Train)?;
        let d_q = st.critic.score(&mut g, q_summ, video, Mode::Train)?;
        let d_r = if st.config.ablation == Ablation::TwoPlayer {
            None
        } else {
            let r = random_scores(batch.len, &mut st.rngs.random_summary);
            let r = scores_input(&mut g, &r);
            let r_summ = summary_repr(&mut g, f_eq, r, SummarySource::Random)?;
            Some(st.critic.score(&mut g, r_summ, video, Mode::Train)?)
        };
        let loss = critic_objective(&mut g, d_g, d_q, d_r, omega)?;
        let value = finite(step, "critic_loss", g.scalar(loss))?;
        g.backward(loss, &mut [&mut st.critic.store])?;
        rmsprop_step(&mut st.critic.store, &mut st.opt_critic, st.config.lr_critic, st.config.rms_decay)
            .map_err(|e| Error::Numeric(format!("step {step}: critic update failed: {e}")))?;
        clip_weights(&mut st.critic.store, st.config.clip)?;
        g.commit_buffers(&mut st.critic.store)?;
        Ok(value)
    }

    /// One generator update; the critic is read but never written.
    pub fn generator_update(&mut self, critic_loss: f64) -> Result<StepLog> {
        let (batch, inputs) = self.batch()?;
        let step = self.state.step + 1;
        let cfg = self.state.config.clone();
        let st = &mut self.state;
        let mut g = Graph::new();
        let out = st.generator.forward(&mut g, &inputs, Mode::Train, Some(&mut st.rngs.dropout))?;

        let omega = cfg.effective_omega();
        let adv = if omega > 0.0 {
            let q_summ = summary_repr(&mut g, out.f_eq, out.scores, SummarySource::Generated)?;
            let d_q = st.critic.critic(&mut g, q_summ, out.f_vq, Mode::Train)?;
            let d_q = g.sum(d_q);
            g.scale(d_q, -omega)
        } else {
            g.input(Tensor::scalar(0.0))
        };
        let summ = weighted(&mut g, cfg.effective_lambda_summ(), |g| {
            let gt = scores_input(g, &batch.gt);
            loss_summ(g, out.scores, gt)
        })?;
        let len = weighted(&mut g, cfg.effective_lambda_len(), |g| loss_length(g, out.mask, batch.gamma))?;
        let total = g.add(adv, summ)?;
        let total = g.add(total, len)?;

        let log = StepLog {
            step,
            critic_loss,
            gen_adv: finite(step, "gen_adv", g.scalar(adv))?,
            loss_summ: finite(step, "loss_summ", g.scalar(summ))?,
            loss_length: finite(step, "loss_length", g.scalar(len))?,
            total_gen: finite(step, "total_gen", g.scalar(total))?,
        };
        g.backward(total, &mut [&mut st.generator.store])?;
        rmsprop_step(&mut st.generator.store, &mut st.opt_generator, cfg.lr_generator, cfg.rms_decay)
            .map_err(|e| Error::Numeric(format!("step {step}: generator update failed: {e}")))?;
        g.commit_buffers(&mut st.generator.store)?;
        Ok(log)
    }

    /// `n_critic` critic updates, one generator update, then bookkeeping.
    pub fn step(&mut self) -> Result<StepLog> {
        let n = self.state.config.n_critic;
        let mut critic = 0.0;
        for _ in 0..n {
            critic += self.critic_update()?;
        }
        let log = self.generator_update(critic / n as f64)?;
        self.state.step = log.step;
        self.state.metrics.push_str(&log.csv_row());
        let every = self.state.config.eval_every;
        if every > 0 && log.step % every == 0 {
            self.validate()?;
        }
        Ok(log)
    }

    /// Scores the current generator on the validation split and keeps it if it is the best so far.
    pub fn validate(&mut self) -> Result<Option<f64>> {
        if self.val.videos.iter().all(|v| v.queries.is_empty()) {
            return Ok(None);
        }
        let st = &mut self.state;
        let report = evaluate(&st.generator, &self.val, Split::Val, Selection::Threshold(st.config.threshold))?;
        if st.best.as_ref().is_none_or(|b| report.f1 > b.f1) {
            st.best = Some(BestSnapshot { step: st.step, f1: report.f1, params: st.generator.store.clone() });
        }
        Ok(Some(report.f1))
    }

    /// Steps until `max_steps`, calling `on_step` after each one (for periodic checkpoints).
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while self.state.step < self.state.config.max_steps {
            self.step()?;
            on_step(self)?;
        }
        Ok(())
    }
}

fn weighted(g: &mut Graph, lambda: f64, term: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let v = term(g)?;
    Ok(g.scale(v, lambda))
}

/// Trains from scratch to `config.max_steps`.
pub fn train(corpus: &Corpus, config: TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::new(corpus, config)?;
    t.run(|_| Ok(()))?;
    Ok(t.into_state())
}

/// Renders logs as metrics CSV text, header included.
pub fn metrics_csv(logs: &[StepLog]) -> String {
    let mut out = METRICS_HEADER.to_string();
    for l in logs {
        let _ = write!(out, "{}", l.csv_row());
    }
    out
}
