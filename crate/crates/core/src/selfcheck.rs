//! The gradient self-check run by `qsgan gradcheck`: finite differences
//! against reverse mode for each building block and the full objective, at
//! `d_h = 8`, `T = 5`.

use rand::RngExt;

use crate::discriminator::{random_scores, scores_input, summary_repr, Critic, SummarySource};
use crate::error::Result;
use crate::generator::{gate, Generator, ShotInputs};
use crate::model::ModelConfig;
use crate::numerics::{grad_check, BiLstm, BatchNorm, GradCheckReport, Graph, Linear, Mode, ParamStore, Tensor, Var};
use crate::rng::{stream, Stream, StreamRng};
use crate::training::{critic_objective, loss_length, loss_summ};

/// Largest relative error accepted by the self-check.
pub const TOLERANCE: f64 = 1e-4;

const SHOTS: usize = 5;
const EPS: f64 = 1e-6;
// Critic coordinates with gradients near 1e-8 need a coarser step to rise above rounding.
const COMPOSITE_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub report: GradCheckReport,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < TOLERANCE
    }
}

pub fn desk_config() -> ModelConfig {
    ModelConfig {
        d_frame: 6,
        d_shot: 5,
        d_text: 4,
        d_fused: 7,
        d_qenc: 3,
        gen_hidden: 8,
        predictor_hidden: 6,
        critic_hidden: 8,
        critic_widths: [8, 6, 4],
        ..Default::default()
    }
}

fn uniform(shape: [usize; 2], rng: &mut StreamRng) -> Tensor {
    let n = shape[0] * shape[1];
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Reduces any output to a scalar with fixed random weights.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let mut r = stream(seed, Stream::Eval);
    let n: usize = shape.iter().product();
    let w = g.input(Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn desk_inputs(cfg: &ModelConfig, rng: &mut StreamRng) -> ShotInputs {
    ShotInputs {
        frame: uniform([SHOTS, cfg.d_frame], rng),
        shot: uniform([SHOTS, cfg.d_shot], rng),
        query: uniform([1, cfg.d_text], rng),
    }
}

/// Every component, in a fixed order.
pub fn gradient_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    let cfg = desk_config();
    let mut data = stream(seed, Stream::Eval);
    let mut init = stream(seed, Stream::Init);
    let x = uniform([SHOTS, 4], &mut data);
    let mut out = Vec::new();
    let mut push = |component, report| out.push(ComponentCheck { component, report });

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "linear", 4, 3, &mut init);
    push("linear", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let xi = g.input(x.clone());
        let y = lin.forward(g, s[0], xi)?;
        project(g, y, seed)
    })?);

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 4);
    let scale = store.find("bn.gamma").expect("gamma exists");
    store.set_values(scale, &[0.5, 1.5, -0.7, 1.1])?;
    push("batchnorm", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let xi = g.input(x.clone());
        let y = bn.forward(g, s[0], xi, Mode::Train)?;
        project(g, y, seed)
    })?);

    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bilstm", 4, 8, &mut init);
    push("bilstm", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let xi = g.input(x.clone());
        let y = lstm.forward(g, s[0], xi)?;
        project(g, y, seed)
    })?);

    let mut store = ParamStore::new();
    let scores = store.add_param("scores", Tensor::new([SHOTS, 1], vec![0.35, 0.48, 0.52, 0.61, 0.44])?);
    push("gate", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let v = g.param(s[0], scores);
        let k = gate(g, v, cfg.tau)?;
        project(g, k, seed)
    })?);

    let gt = vec![1.0, 0.0, 0.0, 1.0, 0.0];
    push("loss_summ", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let v = g.param(s[0], scores);
        let t = scores_input(g, &gt);
        loss_summ(g, v, t)
    })?);
    push("loss_length", grad_check(&mut [&mut store], EPS, seed, |g, s| {
        let v = g.param(s[0], scores);
        loss_length(g, v, 0.2)
    })?);

    let mut gen = Generator::new(&cfg, &mut init)?;
    let mut critic = Critic::new(&cfg, &mut init)?;
    let inputs = desk_inputs(&cfg, &mut data);
    let (gen_shell, critic_shell) = (gen.clone(), critic.clone());

    push("generator", grad_check(&mut [&mut gen.store], EPS, seed, |g, s| {
        let mut gm = gen_shell.clone();
        gm.store = s[0].clone();
        let mut dropout = stream(seed, Stream::Dropout);
        let o = gm.forward(g, &inputs, Mode::Train, Some(&mut dropout))?;
        project(g, o.mask, seed)
    })?);

    let f_vq = uniform([SHOTS, cfg.d_video()], &mut data);
    let f_eq = uniform([SHOTS, cfg.d_encoded()], &mut data);
    push("critic", grad_check(&mut [&mut critic.store], COMPOSITE_EPS, seed, |g, s| {
        let mut cm = critic_shell.clone();
        cm.store = s[0].clone();
        let v = g.input(f_vq.clone());
        let e = g.input(f_eq.clone());
        let sc = scores_input(g, &[0.9, 0.1, 0.4, 0.7, 0.2]);
        let summ = summary_repr(g, e, sc, SummarySource::Generated)?;
        cm.critic(g, summ, v, Mode::Train)
    })?);

    push("composite", grad_check(&mut [&mut gen.store, &mut critic.store], COMPOSITE_EPS, seed, |g, s| {
        let mut gm = gen_shell.clone();
        gm.store = s[0].clone();
        let mut cm = critic_shell.clone();
        cm.store = s[1].clone();
        full_objective(g, &gm, &cm, &inputs, &gt, seed)
    })?);
    Ok(out)
}

/// Generator forward, the three critic scores and every loss term. Dropout and
/// the random summary are redrawn from `seed` on each call.
pub fn full_objective(g: &mut Graph, gen: &Generator, critic: &Critic, inputs: &ShotInputs, gt: &[f64], seed: u64) -> Result<Var> {
    let mut dropout = stream(seed, Stream::Dropout);
    let out = gen.forward(g, inputs, Mode::Train, Some(&mut dropout))?;
    let video = critic.encode_video(g, out.f_vq, Mode::Train)?;
    let truth = scores_input(g, gt);
    let r = random_scores(gt.len(), &mut stream(seed, Stream::RandomSummary));
    let r = scores_input(g, &r);
    let mut d = Vec::with_capacity(3);
    for (scores, source) in [(truth, SummarySource::GroundTruth), (out.scores, SummarySource::Generated), (r, SummarySource::Random)] {
        let summ = summary_repr(g, out.f_eq, scores, source)?;
        d.push(critic.score(g, summ, video, Mode::Train)?);
    }
    let adv = critic_objective(g, d[0], d[1], Some(d[2]), 0.5)?;
    let adv = g.sum(adv);
    let summ = loss_summ(g, out.scores, truth)?;
    let len = loss_length(g, out.mask, 0.2)?;
    let total = g.add(adv, summ)?;
    g.add(total, len)
}
