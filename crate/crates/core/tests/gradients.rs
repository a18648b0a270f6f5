//! Finite-difference checks of every differentiable op and of the full
//! generator + critic objective.

use qsgan_core::discriminator::Critic;
use qsgan_core::generator::{Generator, ShotInputs};
use qsgan_core::numerics::{grad_check, BnMode, Graph, ParamId, ParamStore, Tensor, Var};
use qsgan_core::rng::{stream, Stream, StreamRng};
use qsgan_core::selfcheck::{desk_config, full_objective, gradient_suite};
use qsgan_core::Result;
use rand::RngExt;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;
// Some critic coordinates have gradients near 1e-8, where a smaller step is
// dominated by rounding in the loss.
const COMPOSITE_EPS: f64 = 1e-4;

fn random(shape: [usize; 2], rng: &mut StreamRng) -> Tensor {
    let n = shape[0] * shape[1];
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Parameters bound away from zero so ReLU and |x| kinks stay out of reach.
fn away_from_zero(shape: [usize; 2], rng: &mut StreamRng) -> Tensor {
    let n = shape[0] * shape[1];
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Checks `build(graph, [a, b])` reduced to a scalar by a fixed random projection.
fn check(name: &str, shapes: &[[usize; 2]], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let mut rng = stream(11, Stream::Eval);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> =
        shapes.iter().enumerate().map(|(i, s)| store.add_param(format!("x{i}"), away_from_zero(*s, &mut rng))).collect();
    let probe_rng = std::cell::RefCell::new(None::<Tensor>);
    let report = grad_check(&mut [&mut store], EPS, 3, |g, s| {
        let xs: Vec<Var> = ids.iter().map(|id| g.param(s[0], *id)).collect();
        let y = build(g, &xs)?;
        let shape = g.value(y).shape().to_vec();
        let mut cached = probe_rng.borrow_mut();
        let w = cached.get_or_insert_with(|| {
            let mut r = stream(5, Stream::Eval);
            let n: usize = shape.iter().product();
            Tensor::new(shape.clone(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
        });
        let w = g.input(w.clone());
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    })
    .unwrap();
    println!("{name:<14} max relative error {:.3e} over {} coordinates", report.max_relative_error, report.probed);
    assert!(report.max_relative_error < TOL, "{name}: {report:?}");
}

#[test]
fn matrix_ops() {
    check("matmul", &[[3, 4], [4, 2]], |g, x| g.matmul(x[0], x[1]));
    check("add_row", &[[3, 4], [1, 4]], |g, x| g.add_row(x[0], x[1]));
    check("linear", &[[3, 4], [4, 2], [1, 2]], |g, x| g.linear(x[0], x[1], x[2]));
    check("concat_cols", &[[3, 2], [3, 4]], |g, x| g.concat_cols(x[0], x[1]));
    check("tile_rows", &[[1, 4]], |g, x| g.tile_rows(x[0], 5));
    check("scale_rows", &[[4, 3], [4, 1]], |g, x| g.scale_rows(x[0], x[1]));
    check("mean_rows", &[[5, 3]], |g, x| Ok(g.mean_rows(x[0])));
}

#[test]
fn elementwise_ops() {
    check("add", &[[2, 3], [2, 3]], |g, x| g.add(x[0], x[1]));
    check("sub", &[[2, 3], [2, 3]], |g, x| g.sub(x[0], x[1]));
    check("mul", &[[2, 3], [2, 3]], |g, x| g.mul(x[0], x[1]));
    check("scale", &[[2, 3]], |g, x| Ok(g.scale(x[0], -1.7)));
    check("add_scalar", &[[2, 3]], |g, x| Ok(g.add_scalar(x[0], 0.3)));
    check("sigmoid", &[[2, 3]], |g, x| Ok(g.sigmoid(x[0])));
    check("tanh", &[[2, 3]], |g, x| Ok(g.tanh(x[0])));
    check("relu", &[[2, 3]], |g, x| Ok(g.relu(x[0])));
    check("abs", &[[2, 3]], |g, x| Ok(g.abs(x[0])));
    check("square", &[[2, 3]], |g, x| Ok(g.square(x[0])));
    check("sum", &[[2, 3]], |g, x| Ok(g.sum(x[0])));
    check("mean", &[[2, 3]], |g, x| Ok(g.mean(x[0])));
}

#[test]
fn stochastic_and_normalizing_ops() {
    check("dropout", &[[4, 3]], |g, x| {
        let mut r = stream(4, Stream::Dropout);
        g.dropout(x[0], 0.5, || r.random::<f64>() >= 0.5)
    });
    check("batchnorm", &[[5, 3], [1, 3], [1, 3]], |g, x| Ok(g.batchnorm(x[0], x[1], x[2], BnMode::Train)?.0));
    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    check("batchnorm_eval", &[[5, 3], [1, 3], [1, 3]], |g, x| {
        Ok(g.batchnorm(x[0], x[1], x[2], BnMode::Eval { mean: &mean, var: &var })?.0)
    });
}

#[test]
fn bilstm() {
    let (d, h) = (3, 8);
    check("bilstm", &[[5, d], [d, 4 * h], [h, 4 * h], [1, 4 * h], [d, 4 * h], [h, 4 * h], [1, 4 * h]], |g, x| {
        use qsgan_core::numerics::LstmVars;
        let scaled: Vec<Var> = x[1..].iter().map(|&v| g.scale(v, 0.3)).collect();
        let fwd = LstmVars { w_x: scaled[0], w_h: scaled[1], b: scaled[2] };
        let bwd = LstmVars { w_x: scaled[3], w_h: scaled[4], b: scaled[5] };
        g.bilstm(x[0], fwd, bwd)
    });
}

#[test]
fn full_objective_at_desk_dims() {
    let cfg = desk_config();
    let mut init = stream(1, Stream::Init);
    let mut gen = Generator::new(&cfg, &mut init).unwrap();
    let mut critic = Critic::new(&cfg, &mut init).unwrap();
    let mut r = stream(21, Stream::Eval);
    let inputs = ShotInputs {
        frame: random([5, cfg.d_frame], &mut r),
        shot: random([5, cfg.d_shot], &mut r),
        query: random([1, cfg.d_text], &mut r),
    };
    let gt = [1.0, 0.0, 0.0, 1.0, 0.0];
    let (gen_shell, critic_shell) = (gen.clone(), critic.clone());
    let report = grad_check(&mut [&mut gen.store, &mut critic.store], COMPOSITE_EPS, 17, |g, s| {
        let mut gm = gen_shell.clone();
        gm.store = s[0].clone();
        let mut cm = critic_shell.clone();
        cm.store = s[1].clone();
        full_objective(g, &gm, &cm, &inputs, &gt, 8)
    })
    .unwrap();
    println!("composite      max relative error {:.3e} over {} coordinates", report.max_relative_error, report.probed);
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn self_check_suite_passes() {
    let start = std::time::Instant::now();
    for seed in [0, 7] {
        for c in gradient_suite(seed).unwrap() {
            println!("seed {seed} {:<12} {:.3e}", c.component, c.report.max_relative_error);
            assert!(c.passed(), "{c:?}");
        }
    }
    assert!(start.elapsed().as_secs() < 120);
}
