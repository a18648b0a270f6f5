//! Seeded random streams.
//!
//! Every run draws from one user seed. Each consumer gets its own
//! xoshiro256++ stream: the generator is seeded with `seed_from_u64(seed)` and
//! advanced by `Stream as usize` calls to `jump()` (2^128 steps each), so the
//! streams never overlap and adding draws to one never shifts another.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

pub type StreamRng = Xoshiro256PlusPlus;

pub const GENERATOR_NAME: &str = "xoshiro256++";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Corpus = 0,
    Init = 1,
    Sampling = 2,
    Dropout = 3,
    RandomSummary = 4,
    Eval = 5,
}

impl Stream {
    pub const ALL: [Stream; 6] =
        [Stream::Corpus, Stream::Init, Stream::Sampling, Stream::Dropout, Stream::RandomSummary, Stream::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Corpus => "corpus",
            Stream::Init => "init",
            Stream::Sampling => "sampling",
            Stream::Dropout => "dropout",
            Stream::RandomSummary => "random-summary",
            Stream::Eval => "eval",
        }
    }

    pub fn jumps(self) -> usize {
        self as usize
    }
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..which.jumps() {
        rng.jump();
    }
    rng
}
