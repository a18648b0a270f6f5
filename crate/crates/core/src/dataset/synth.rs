//! Planted synthetic corpus.
//!
//! Every concept owns a random unit direction in the frame-feature space and one
//! in the shot-feature space. A shot's features are the sum of the directions of
//! its annotated concepts times `relevance_strength`, plus unit Gaussian noise.
//! Ground truth for a query marks exactly the shots annotated with one of its
//! concepts, so a model that can read the planted directions recovers it.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{AnnotatedQuery, ConceptId, ConceptTable, Corpus, Query, RngInfo, Scenario, Split, Video};
use super::format::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamRng};

const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// Shots per video.
    pub shots: usize,
    pub n_concepts: usize,
    pub d_frame: usize,
    pub d_shot: usize,
    pub d_text: usize,
    pub relevance_strength: f64,
    pub queries_per_scenario: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 8,
            shots: 60,
            n_concepts: 12,
            d_frame: 32,
            d_shot: 48,
            d_text: 16,
            relevance_strength: 3.0,
            queries_per_scenario: 3,
        }
    }
}

impl SynthConfig {
    /// Feature widths of the published setup (ResNet-152 pool, C3D fc6, word2vec).
    pub fn paper_scale() -> Self {
        SynthConfig { d_frame: 2048, d_shot: 4096, d_text: 300, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_videos", self.n_videos),
            ("shots", self.shots),
            ("d_frame", self.d_frame),
            ("d_shot", self.d_shot),
            ("d_text", self.d_text),
            ("queries_per_scenario", self.queries_per_scenario),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_concepts < 4 {
            return Err(Error::Config(format!("n_concepts must be at least 4, got {}", self.n_concepts)));
        }
        if !(self.relevance_strength >= 0.0 && self.relevance_strength.is_finite()) {
            return Err(Error::Config(format!("relevance_strength must be finite and >= 0, got {}", self.relevance_strength)));
        }
        Ok(())
    }
}

fn unit_vector(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn split_for(index: usize, n_videos: usize) -> Split {
    match n_videos {
        1 => Split::Train,
        2 => [Split::Train, Split::Test][index],
        n if index == n - 1 => Split::Test,
        n if index == n - 2 => Split::Val,
        _ => Split::Train,
    }
}

/// Picks `count` distinct queries of one scenario; `None` when too few candidates exist.
fn pick_pairs(
    candidates: Vec<(ConceptId, ConceptId)>,
    count: usize,
    rng: &mut StreamRng,
) -> Option<Vec<(ConceptId, ConceptId)>> {
    if candidates.len() < count {
        return None;
    }
    Some(candidates.sample(rng, count).copied().collect())
}

fn annotate_video(cfg: &SynthConfig, rng: &mut StreamRng) -> Option<(Vec<Vec<ConceptId>>, Vec<(Scenario, ConceptId, ConceptId)>)> {
    let n = cfg.n_concepts as ConceptId;
    let mut all: Vec<ConceptId> = (0..n).collect();
    all.shuffle(rng);
    let n_present = (cfg.n_concepts / 2).max(3).min(cfg.n_concepts);
    let mut present = all[..n_present].to_vec();
    present.sort_unstable();

    // Only half of the present pairs may share a shot, so long videos still
    // leave pairs that appear in separate shots only.
    let mut allowed: Vec<(ConceptId, ConceptId)> = Vec::new();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            allowed.push((a, b));
        }
    }
    allowed.shuffle(rng);
    allowed.truncate(allowed.len().div_ceil(2));

    // 40% of shots carry nothing, 40% one concept, 20% two.
    let shot_concepts: Vec<Vec<ConceptId>> = (0..cfg.shots)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.4 {
                Vec::new()
            } else if u < 0.8 {
                vec![*present.choose(rng).expect("present set is nonempty")]
            } else {
                let (a, b) = *allowed.choose(rng).expect("at least three present concepts");
                vec![a, b]
            }
        })
        .collect();

    let appearing: BTreeSet<ConceptId> = shot_concepts.iter().flatten().copied().collect();
    let co: BTreeSet<(ConceptId, ConceptId)> =
        shot_concepts.iter().filter(|cs| cs.len() == 2).map(|cs| (cs[0], cs[1])).collect();
    let seen: Vec<ConceptId> = appearing.iter().copied().collect();
    let unseen: Vec<ConceptId> = (0..n).filter(|c| !appearing.contains(c)).collect();
    let pairs = |xs: &[ConceptId], ys: &[ConceptId]| -> Vec<(ConceptId, ConceptId)> {
        let mut out = Vec::new();
        for &a in xs {
            for &b in ys {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    };
    let same: Vec<_> = co.iter().copied().collect();
    let different: Vec<_> = pairs(&seen, &seen).into_iter().filter(|p| !co.contains(p)).collect();
    let one: Vec<(ConceptId, ConceptId)> =
        seen.iter().flat_map(|&a| unseen.iter().map(move |&b| (a, b))).collect();
    let none = pairs(&unseen, &unseen);

    let q = cfg.queries_per_scenario;
    let mut queries = Vec::new();
    for (scenario, cands) in [
        (Scenario::BothSameShot, same),
        (Scenario::BothDifferentShots, different),
        (Scenario::OnePresent, one),
        (Scenario::NonePresent, none),
    ] {
        for (a, b) in pick_pairs(cands, q, rng)? {
            queries.push((scenario, a, b));
        }
    }
    Some((shot_concepts, queries))
}

/// Generates a corpus in which every video covers all four query scenarios.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, Stream::Corpus);

    let mut emb = Vec::with_capacity(cfg.n_concepts * cfg.d_text);
    for _ in 0..cfg.n_concepts {
        emb.extend(unit_vector(cfg.d_text, &mut rng).into_iter().map(|x| x as f32));
    }
    let concepts = ConceptTable {
        names: (0..cfg.n_concepts).map(|i| format!("concept{i:02}")).collect(),
        embeddings: FeatureMatrix::new(cfg.n_concepts, cfg.d_text, emb)?,
    };
    let frame_dirs: Vec<Vec<f64>> = (0..cfg.n_concepts).map(|_| unit_vector(cfg.d_frame, &mut rng)).collect();
    let shot_dirs: Vec<Vec<f64>> = (0..cfg.n_concepts).map(|_| unit_vector(cfg.d_shot, &mut rng)).collect();

    let mut videos = Vec::with_capacity(cfg.n_videos);
    for vi in 0..cfg.n_videos {
        let (shot_concepts, queries) = (0..MAX_ATTEMPTS)
            .find_map(|_| annotate_video(cfg, &mut rng))
            .ok_or_else(|| {
                Error::Generation(format!(
                    "could not cover all four scenarios with {} queries each from {} concepts over {} shots",
                    cfg.queries_per_scenario, cfg.n_concepts, cfg.shots
                ))
            })?;

        let mut features = |dirs: &[Vec<f64>], d: usize| -> Result<FeatureMatrix> {
            let mut data = Vec::with_capacity(cfg.shots * d);
            for cs in &shot_concepts {
                for j in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    let signal: f64 = cs.iter().map(|&c| dirs[c as usize][j]).sum();
                    data.push((cfg.relevance_strength * signal + noise) as f32);
                }
            }
            FeatureMatrix::new(cfg.shots, d, data)
        };
        let frame_feats = features(&frame_dirs, cfg.d_frame)?;
        let shot_feats = features(&shot_dirs, cfg.d_shot)?;

        let queries = queries
            .into_iter()
            .enumerate()
            .map(|(qi, (scenario, a, b))| {
                let gt_mask =
                    shot_concepts.iter().map(|cs| f64::from(u8::from(cs.contains(&a) || cs.contains(&b)))).collect();
                AnnotatedQuery { query: Query { id: format!("q{qi:02}"), concept_a: a, concept_b: b, scenario }, gt_mask }
            })
            .collect();
        videos.push(Video {
            id: format!("vid{vi:02}"),
            split: split_for(vi, cfg.n_videos),
            frame_feats,
            shot_feats,
            shot_concepts,
            queries,
        });
    }

    let corpus = Corpus {
        d_frame: cfg.d_frame,
        d_shot: cfg.d_shot,
        concepts,
        videos,
        rng: Some(RngInfo {
            generator: rng::GENERATOR_NAME.into(),
            seed,
            stream: Stream::Corpus.name().into(),
            jumps: Stream::Corpus.jumps() as u32,
        }),
    };
    corpus.validate()?;
    Ok(corpus)
}
