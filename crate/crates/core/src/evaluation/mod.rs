//! Concept-IoU matching, precision/recall/F1 and summary-length diagnostics.

mod matching;

pub use matching::{iou, max_weight_matching, prf, MatchingInstance, Prf};

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{gamma_of, Corpus, Scenario, Split, Video};
use crate::error::{Error, Result};
use crate::generator::{select_shots, select_top, Generator, ShotInputs};

/// How scores become a binary summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum Selection {
    /// Shots scoring strictly above the threshold.
    Threshold(f64),
    /// The `ceil(gamma * T)` highest-scoring shots, `gamma` taken from the ground truth.
    TopGamma,
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Threshold(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryResult {
    pub video_id: String,
    pub query_id: String,
    pub scenario: Scenario,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub selected: usize,
    pub key_shots: usize,
    pub matched: usize,
    /// `sum_t (k_t - s_g_t)` with binarized `k`.
    pub length_error: f64,
    pub shots: usize,
}

impl QueryResult {
    /// Queries without key shots have no defined F1 and are left out of averages.
    pub fn is_scored(&self) -> bool {
        self.key_shots > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoResult {
    pub video_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub scored_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub selection: Selection,
    pub queries: Vec<QueryResult>,
    pub videos: Vec<VideoResult>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `|(1/Q) sum_q sum_t (k - s_g)|` over every query of the split.
    pub length_distance: f64,
    /// Same as `length_distance` with each query's sum divided by its shot count.
    pub length_gap: f64,
}

/// Runs the generator over every whole video of `split` and scores each query.
pub fn evaluate(generator: &Generator, corpus: &Corpus, split: Split, selection: Selection) -> Result<EvalReport> {
    evaluate_predictions(corpus, split, selection, |vi, query| {
        let v = &corpus.videos[vi];
        let inputs = ShotInputs::from_corpus(corpus, vi, 0..v.len(), &v.queries[query].query)?;
        Ok(generator.predict(&inputs)?.0)
    })
}

/// Scores arbitrary per-shot predictions; `predict(video_index, query_index)`
/// returns one score per shot of that video.
pub fn evaluate_predictions<F>(corpus: &Corpus, split: Split, selection: Selection, mut predict: F) -> Result<EvalReport>
where
    F: FnMut(usize, usize) -> Result<Vec<f64>>,
{
    let mut picked: Vec<(usize, &Video)> = corpus.videos.iter().enumerate().filter(|(_, v)| v.split == split).collect();
    picked.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    if picked.iter().all(|(_, v)| v.queries.is_empty()) {
        return Err(Error::Contract(format!("split {split} has no queried videos")));
    }

    let mut queries = Vec::new();
    let mut videos = Vec::new();
    for (vi, video) in picked {
        let mut order: Vec<usize> = (0..video.queries.len()).collect();
        order.sort_by(|&a, &b| video.queries[a].query.id.cmp(&video.queries[b].query.id));
        let start = queries.len();
        for qi in order {
            let scores = predict(vi, qi)?;
            queries.push(score_query(video, qi, &scores, selection)?);
        }
        let scored: Vec<&QueryResult> = queries[start..].iter().filter(|q| q.is_scored()).collect();
        if !scored.is_empty() {
            let n = scored.len() as f64;
            videos.push(VideoResult {
                video_id: video.id.clone(),
                precision: scored.iter().map(|q| q.precision).sum::<f64>() / n,
                recall: scored.iter().map(|q| q.recall).sum::<f64>() / n,
                f1: scored.iter().map(|q| q.f1).sum::<f64>() / n,
                scored_queries: scored.len(),
            });
        }
    }

    let mean = |f: fn(&VideoResult) -> f64| {
        if videos.is_empty() {
            0.0
        } else {
            videos.iter().map(f).sum::<f64>() / videos.len() as f64
        }
    };
    let q = queries.len() as f64;
    let length_distance = (queries.iter().map(|r| r.length_error).sum::<f64>() / q).abs();
    let length_gap = (queries.iter().map(|r| r.length_error / r.shots as f64).sum::<f64>() / q).abs();
    Ok(EvalReport {
        split,
        selection,
        precision: mean(|v| v.precision),
        recall: mean(|v| v.recall),
        f1: mean(|v| v.f1),
        queries,
        videos,
        length_distance,
        length_gap,
    })
}

fn score_query(video: &Video, qi: usize, scores: &[f64], selection: Selection) -> Result<QueryResult> {
    let aq = &video.queries[qi];
    let t = video.len();
    if scores.len() != t {
        return Err(Error::Dimension(format!("{} scores for video {} of {t} shots", scores.len(), video.id)));
    }
    if aq.gt_mask.len() != t {
        return Err(Error::Format(format!("video {} query {}: mask covers {} of {t} shots", video.id, aq.query.id, aq.gt_mask.len())));
    }
    let scores = crate::generator::ConfidenceScores(scores.to_vec());
    let chosen = match selection {
        Selection::Threshold(th) => select_shots(&scores, th)?,
        Selection::TopGamma => {
            let gamma = gamma_of(&aq.gt_mask)?;
            select_top(&scores, (gamma * t as f64).ceil() as usize)
        }
    };
    let gen: Vec<&[u32]> = (0..t).filter(|&s| chosen[s]).map(|s| video.shot_concepts[s].as_slice()).collect();
    let gt: Vec<&[u32]> = (0..t).filter(|&s| aq.gt_mask[s] > 0.5).map(|s| video.shot_concepts[s].as_slice()).collect();
    let inst = MatchingInstance::from_concepts(&gen, &gt);
    let matched = max_weight_matching(&inst).len();
    let p = prf(matched, gen.len(), gt.len())?;
    let length_error = chosen.iter().zip(&aq.gt_mask).map(|(k, g)| f64::from(u8::from(*k)) - g).sum();
    Ok(QueryResult {
        video_id: video.id.clone(),
        query_id: aq.query.id.clone(),
        scenario: aq.query.scenario,
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        selected: gen.len(),
        key_shots: gt.len(),
        matched,
        length_error,
        shots: t,
    })
}

impl EvalReport {
    /// One row per query, then one `mean` row per video and a final corpus row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,query_id,scenario,precision,recall,f1\n");
        for q in &self.queries {
            let _ = writeln!(out, "{},{},{},{},{},{}", q.video_id, q.query_id, q.scenario, q.precision, q.recall, q.f1);
        }
        for v in &self.videos {
            let _ = writeln!(out, "{},mean,all,{},{},{}", v.video_id, v.precision, v.recall, v.f1);
        }
        let _ = writeln!(out, "all,mean,all,{},{},{}", self.precision, self.recall, self.f1);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Summary-length diagnostics as a two-line CSV.
    pub fn length_csv(&self) -> String {
        format!("split,queries,length_distance,length_gap\n{},{},{},{}\n", self.split, self.queries.len(), self.length_distance, self.length_gap)
    }

    pub fn scored(&self) -> impl Iterator<Item = &QueryResult> {
        self.queries.iter().filter(|q| q.is_scored())
    }
}
