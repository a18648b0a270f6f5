use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qsgan_bench::{desk_corpus, matching_instance};
use qsgan_core::dataset::Split;
use qsgan_core::evaluation::{evaluate, max_weight_matching, Selection};
use qsgan_core::generator::{Generator, ShotInputs};
use qsgan_core::model::ModelConfig;
use qsgan_core::numerics::{Graph, Mode};
use qsgan_core::rng::{stream, Stream};
use qsgan_core::training::{TrainConfig, Trainer};

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("max_weight_matching");
    for n in [6, 30, 60] {
        let inst = matching_instance(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| b.iter(|| max_weight_matching(black_box(inst))));
    }
    group.finish();
}

fn generator(c: &mut Criterion) {
    let corpus = desk_corpus();
    let cfg = ModelConfig::default();
    let gen = Generator::new(&cfg, &mut stream(0, Stream::Init)).unwrap();
    let v = &corpus.videos[0];
    let inputs = ShotInputs::from_corpus(&corpus, 0, 0..v.len(), &v.queries[0].query).unwrap();
    c.bench_function("generator_predict_60", |b| b.iter(|| gen.predict(black_box(&inputs)).unwrap()));
    c.bench_function("generator_forward_backward_60", |b| {
        b.iter(|| {
            let mut gen = gen.clone();
            let mut g = Graph::new();
            let mut rng = stream(0, Stream::Dropout);
            let out = gen.forward(&mut g, &inputs, Mode::Train, Some(&mut rng)).unwrap();
            let loss = g.sum(out.scores);
            g.backward(loss, &mut [&mut gen.store]).unwrap();
        })
    });
}

fn training(c: &mut Criterion) {
    let corpus = desk_corpus();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("generator_step_desk", |b| {
        let mut t = Trainer::new(&corpus, TrainConfig { eval_every: 0, max_steps: u64::MAX, ..Default::default() }).unwrap();
        b.iter(|| t.step().unwrap())
    });
    let gen = Generator::new(&ModelConfig::default(), &mut stream(0, Stream::Init)).unwrap();
    group.bench_function("evaluate_test_split", |b| b.iter(|| evaluate(&gen, &corpus, Split::Test, Selection::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, matching, generator, training);
criterion_main!(benches);
