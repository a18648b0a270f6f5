use qsgan_core::dataset::{synth_corpus, Corpus, SynthConfig};
use qsgan_core::discriminator::SummarySource;
use qsgan_core::model::ModelConfig;
use qsgan_core::training::{load_checkpoint, save_checkpoint, Ablation, Checkpoint, TrainConfig, Trainer, CHECKPOINT_VERSION};
use qsgan_core::Error;

fn corpus() -> Corpus {
    let cfg = SynthConfig { n_videos: 4, shots: 16, d_frame: 6, d_shot: 5, d_text: 4, ..Default::default() };
    synth_corpus(&cfg, 3).unwrap()
}

fn config(ablation: Ablation) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d_frame: 6,
            d_shot: 5,
            d_text: 4,
            d_fused: 6,
            d_qenc: 3,
            gen_hidden: 4,
            predictor_hidden: 4,
            critic_hidden: 3,
            critic_widths: [6, 4, 3],
            ..Default::default()
        },
        n_critic: 2,
        max_steps: 6,
        segment_len: 8,
        eval_every: 2,
        seed: 11,
        ablation,
        ..Default::default()
    }
}

#[test]
fn fixed_seed_reproduces_the_log() {
    let c = corpus();
    let run = || {
        let mut t = Trainer::new(&c, config(Ablation::None)).unwrap();
        t.run(|_| Ok(())).unwrap();
        t.into_state().metrics
    };
    let a = run();
    assert_eq!(a.lines().count(), 7);
    assert_eq!(a, run());
}

#[test]
fn logged_terms_sum_to_total() {
    let c = corpus();
    for ablation in Ablation::ALL {
        let mut t = Trainer::new(&c, config(ablation)).unwrap();
        for _ in 0..3 {
            let l = t.step().unwrap();
            assert!((l.gen_adv + l.loss_summ + l.loss_length - l.total_gen).abs() < 1e-12, "{ablation}: {l:?}");
            match ablation {
                Ablation::NoSumm => assert_eq!(l.loss_summ, 0.0),
                Ablation::NoLength => assert_eq!(l.loss_length, 0.0),
                _ => {}
            }
        }
    }
}

#[test]
fn two_player_never_scores_random_summaries() {
    let c = corpus();
    let mut t = Trainer::new(&c, config(Ablation::TwoPlayer)).unwrap();
    t.run(|_| Ok(())).unwrap();
    let critic = &t.state().critic;
    assert_eq!(critic.evaluations_of(SummarySource::Random), 0);
    assert!(critic.evaluations_of(SummarySource::GroundTruth) > 0);

    let mut full = Trainer::new(&c, config(Ablation::None)).unwrap();
    full.step().unwrap();
    assert_eq!(full.state().critic.evaluations_of(SummarySource::Random), 2);
}

#[test]
fn critic_weights_stay_clipped() {
    let c = corpus();
    let cfg = config(Ablation::None);
    let clip = cfg.clip;
    let mut t = Trainer::new(&c, cfg).unwrap();
    for _ in 0..3 {
        t.critic_update().unwrap();
        let store = &t.state().critic.store;
        for id in store.trainable_ids() {
            assert!(store.get(id).data().iter().all(|w| w.abs() <= clip), "{}", store.name(id));
        }
    }
}

#[test]
fn generator_update_leaves_critic_untouched() {
    let c = corpus();
    let mut t = Trainer::new(&c, config(Ablation::None)).unwrap();
    t.critic_update().unwrap();
    let before = t.state().critic.store.clone();
    let gen_before = t.state().generator.store.clone();
    t.generator_update(0.0).unwrap();
    assert_eq!(t.state().critic.store, before);
    assert_ne!(t.state().generator.store, gen_before);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let c = corpus();
    let mut t = Trainer::new(&c, config(Ablation::None)).unwrap();
    for _ in 0..2 {
        t.step().unwrap();
    }
    let bytes = t.state().to_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.qsck");
    save_checkpoint(t.state(), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.step, 2);
    assert!(back.best.is_some());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let c = corpus();
    let mut whole = Trainer::new(&c, config(Ablation::None)).unwrap();
    whole.run(|_| Ok(())).unwrap();

    let mut first = Trainer::new(&c, config(Ablation::None)).unwrap();
    for _ in 0..3 {
        first.step().unwrap();
    }
    let restored = Checkpoint::from_bytes(&first.into_state().to_bytes()).unwrap();
    let mut second = Trainer::resume(&c, restored).unwrap();
    second.run(|_| Ok(())).unwrap();

    assert_eq!(second.state().metrics, whole.state().metrics);
    assert_eq!(second.state().to_bytes(), whole.state().to_bytes());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let state = Checkpoint::initial(config(Ablation::None)).unwrap();
    let bytes = state.to_bytes();
    for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&future), Err(Error::Version { .. })));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
}

#[test]
fn mismatched_corpus_is_rejected() {
    let c = synth_corpus(&SynthConfig { n_videos: 4, shots: 16, d_frame: 7, d_shot: 5, d_text: 4, ..Default::default() }, 3).unwrap();
    assert!(matches!(Trainer::new(&c, config(Ablation::None)), Err(Error::Dimension(_))));
}
