//! Shared fixtures for the benchmarks.

use rand::RngExt;

use qsgan_core::dataset::{synth_corpus, Corpus, SynthConfig};
use qsgan_core::evaluation::MatchingInstance;
use qsgan_core::rng::{stream, Stream};

/// The desk-scale synthetic corpus.
pub fn desk_corpus() -> Corpus {
    synth_corpus(&SynthConfig::default(), 0).expect("default corpus")
}

/// `n x n` matching instance with weights on the IoU grid of two-concept shots.
pub fn matching_instance(n: usize, seed: u64) -> MatchingInstance {
    let grid = [0.0, 1.0 / 3.0, 0.5, 1.0];
    let mut rng = stream(seed, Stream::Eval);
    let w = (0..n * n).map(|_| grid[rng.random_range(0..grid.len())]).collect();
    MatchingInstance::new(n, n, w).expect("weights on the grid")
}
