use rand::RngExt;

use super::corpus::{Corpus, Query};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// A contiguous window of one video paired with one of its queries.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub video: usize,
    pub video_id: String,
    pub start: usize,
    pub len: usize,
    pub query_index: usize,
    pub query: Query,
    pub gt: Vec<f64>,
    /// Fraction of key shots in `gt`.
    pub gamma: f64,
}

/// Fraction of key shots in a mask.
pub fn gamma_of(mask: &[f64]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Contract("gamma of an empty mask".into()));
    }
    Ok(mask.iter().sum::<f64>() / mask.len() as f64)
}

/// Draws a video, then one of its queries, then a window of `min(segment_len, T)`
/// successive shots, each uniformly.
pub fn sample_batch(corpus: &Corpus, rng: &mut StreamRng, segment_len: usize) -> Result<TrainingBatch> {
    if segment_len == 0 {
        return Err(Error::Contract("segment length must be at least 1".into()));
    }
    let candidates: Vec<usize> = (0..corpus.videos.len()).filter(|&i| !corpus.videos[i].queries.is_empty()).collect();
    if candidates.is_empty() {
        return Err(Error::Contract("cannot sample from a corpus without queried videos".into()));
    }
    let video = candidates[rng.random_range(0..candidates.len())];
    let v = &corpus.videos[video];
    let query_index = rng.random_range(0..v.queries.len());
    let t = v.len();
    let len = segment_len.min(t);
    let start = rng.random_range(0..=t - len);
    let aq = &v.queries[query_index];
    let gt = aq.gt_mask[start..start + len].to_vec();
    let gamma = gamma_of(&gt)?;
    Ok(TrainingBatch {
        video,
        video_id: v.id.clone(),
        start,
        len,
        query_index,
        query: aq.query.clone(),
        gt,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_corpus, SynthConfig};
    use crate::rng::{stream, Stream};

    #[test]
    fn gamma_arithmetic() {
        assert_eq!(gamma_of(&[1.0, 0.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(gamma_of(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(gamma_of(&[1.0; 3]).unwrap(), 1.0);
        assert!(matches!(gamma_of(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn long_segment_covers_whole_video() {
        let cfg = SynthConfig { n_videos: 1, shots: 20, d_frame: 3, d_shot: 3, d_text: 3, ..Default::default() };
        let c = synth_corpus(&cfg, 2).unwrap();
        let mut rng = stream(2, Stream::Sampling);
        for _ in 0..20 {
            let b = sample_batch(&c, &mut rng, 1000).unwrap();
            assert_eq!((b.start, b.len), (0, 20));
            assert_eq!(b.gamma, gamma_of(&b.gt).unwrap());
        }
    }

    #[test]
    fn empty_corpus_and_zero_segment_rejected() {
        let cfg = SynthConfig { n_videos: 1, shots: 20, d_frame: 3, d_shot: 3, d_text: 3, ..Default::default() };
        let mut c = synth_corpus(&cfg, 2).unwrap();
        let mut rng = stream(2, Stream::Sampling);
        assert!(sample_batch(&c, &mut rng, 0).is_err());
        c.videos.clear();
        assert!(matches!(sample_batch(&c, &mut rng, 5), Err(Error::Contract(_))));
    }
}
