use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{load_feature_matrix, write_feature_matrix, FeatureMatrix};
use crate::error::{Error, Result};

pub type ConceptId = u32;

pub const MANIFEST_FORMAT: &str = "qsgan-corpus";
pub const MANIFEST_VERSION: u32 = 1;

/// How the two concepts of a query relate to the annotations of its video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    BothSameShot,
    BothDifferentShots,
    OnePresent,
    NonePresent,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::BothSameShot, Scenario::BothDifferentShots, Scenario::OnePresent, Scenario::NonePresent];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::BothSameShot => "both-same-shot",
            Scenario::BothDifferentShots => "both-different-shots",
            Scenario::OnePresent => "one-present",
            Scenario::NonePresent => "none-present",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub concept_a: ConceptId,
    pub concept_b: ConceptId,
    pub scenario: Scenario,
}

/// A query together with its ground-truth key-shot mask over the whole video.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedQuery {
    pub query: Query,
    pub gt_mask: Vec<f64>,
}

/// Concept dictionary: names and `d_text`-wide embeddings, one row per concept.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptTable {
    pub names: Vec<String>,
    pub embeddings: FeatureMatrix,
}

impl ConceptTable {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, id: ConceptId) -> Result<&[f32]> {
        let i = id as usize;
        if i >= self.names.len() {
            return Err(Error::Lookup(id));
        }
        Ok(self.embeddings.row(i))
    }
}

/// Borrowed view of one shot.
#[derive(Clone, Copy, Debug)]
pub struct ShotRecord<'a> {
    pub frame_feat: &'a [f32],
    pub shot_feat: &'a [f32],
    pub concepts: &'a [ConceptId],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub split: Split,
    /// `T x d_frame`
    pub frame_feats: FeatureMatrix,
    /// `T x d_shot`
    pub shot_feats: FeatureMatrix,
    /// Sorted, de-duplicated concept ids per shot.
    pub shot_concepts: Vec<Vec<ConceptId>>,
    pub queries: Vec<AnnotatedQuery>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.shot_concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shot_concepts.is_empty()
    }

    pub fn shot(&self, t: usize) -> ShotRecord<'_> {
        ShotRecord {
            frame_feat: self.frame_feats.row(t),
            shot_feat: self.shot_feats.row(t),
            concepts: &self.shot_concepts[t],
        }
    }
}

/// Provenance of a generated corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngInfo {
    pub generator: String,
    pub seed: u64,
    pub stream: String,
    pub jumps: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub d_frame: usize,
    pub d_shot: usize,
    pub concepts: ConceptTable,
    pub videos: Vec<Video>,
    pub rng: Option<RngInfo>,
}

impl Corpus {
    pub fn d_text(&self) -> usize {
        self.concepts.dim()
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// A corpus holding only the videos of `split`.
    pub fn subset(&self, split: Split) -> Corpus {
        Corpus {
            d_frame: self.d_frame,
            d_shot: self.d_shot,
            concepts: self.concepts.clone(),
            videos: self.videos.iter().filter(|v| v.split == split).cloned().collect(),
            rng: self.rng.clone(),
        }
    }

    /// Checks every cross-reference and dimension.
    pub fn validate(&self) -> Result<()> {
        let n_concepts = self.concepts.len();
        if self.concepts.embeddings.rows() != n_concepts {
            return Err(Error::Format(format!(
                "concept table has {} embedding rows for {} names",
                self.concepts.embeddings.rows(),
                n_concepts
            )));
        }
        for v in &self.videos {
            let t = v.shot_concepts.len();
            if t == 0 {
                return Err(Error::Format(format!("video {} has no shots", v.id)));
            }
            for (what, m, d) in [("frame", &v.frame_feats, self.d_frame), ("shot", &v.shot_feats, self.d_shot)] {
                if m.cols() != d {
                    return Err(Error::Format(format!(
                        "video {}: {what} features have {} columns, expected {d}",
                        v.id,
                        m.cols()
                    )));
                }
                if m.rows() != t {
                    return Err(Error::Format(format!(
                        "video {}: {what} features have {} rows, expected {t} shots",
                        v.id,
                        m.rows()
                    )));
                }
                if m.data().iter().any(|x| !x.is_finite()) {
                    return Err(Error::Format(format!("video {}: non-finite {what} feature", v.id)));
                }
            }
            for (s, cs) in v.shot_concepts.iter().enumerate() {
                if let Some(bad) = cs.iter().find(|c| **c as usize >= n_concepts) {
                    return Err(Error::Format(format!("video {} shot {s}: dangling concept id {bad}", v.id)));
                }
            }
            for aq in &v.queries {
                let q = &aq.query;
                for c in [q.concept_a, q.concept_b] {
                    if c as usize >= n_concepts {
                        return Err(Error::Format(format!("video {} query {}: dangling concept id {c}", v.id, q.id)));
                    }
                }
                if q.concept_a == q.concept_b {
                    return Err(Error::Format(format!("video {} query {}: concepts must differ", v.id, q.id)));
                }
                if aq.gt_mask.len() != t {
                    return Err(Error::Format(format!(
                        "video {} query {}: mask has length {}, video has {t} shots",
                        v.id,
                        q.id,
                        aq.gt_mask.len()
                    )));
                }
                if aq.gt_mask.iter().any(|m| !(0.0..=1.0).contains(m)) {
                    return Err(Error::Format(format!("video {} query {}: mask values outside [0, 1]", v.id, q.id)));
                }
                if q.scenario != Scenario::NonePresent && aq.gt_mask.iter().all(|m| *m == 0.0) {
                    return Err(Error::Format(format!(
                        "video {} query {}: scenario {} needs at least one key shot",
                        v.id, q.id, q.scenario
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical manifest text and every matrix payload.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let manifest = self.manifest(|v, kind| format!("{v}.{kind}"));
        h.update(serde_json::to_vec(&manifest).expect("manifest serializes"));
        h.update(self.concepts.embeddings.to_bytes());
        for v in &self.videos {
            h.update(v.frame_feats.to_bytes());
            h.update(v.shot_feats.to_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn manifest(&self, file_name: impl Fn(&str, &str) -> String) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            d_frame: self.d_frame,
            d_shot: self.d_shot,
            d_text: self.d_text(),
            rng: self.rng.clone(),
            concepts: ConceptsEntry { path: "concepts.qsfm".into(), names: self.concepts.names.clone() },
            videos: self
                .videos
                .iter()
                .map(|v| VideoEntry {
                    id: v.id.clone(),
                    split: v.split,
                    frame_features: file_name(&v.id, "frame.qsfm"),
                    shot_features: file_name(&v.id, "shot.qsfm"),
                    shot_concepts: v.shot_concepts.clone(),
                    queries: v
                        .queries
                        .iter()
                        .map(|aq| QueryEntry {
                            id: aq.query.id.clone(),
                            concepts: [aq.query.concept_a, aq.query.concept_b],
                            scenario: aq.query.scenario,
                            gt_mask: aq.gt_mask.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    d_frame: usize,
    d_shot: usize,
    d_text: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<RngInfo>,
    concepts: ConceptsEntry,
    videos: Vec<VideoEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConceptsEntry {
    path: String,
    names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoEntry {
    id: String,
    split: Split,
    frame_features: String,
    shot_features: String,
    shot_concepts: Vec<Vec<ConceptId>>,
    queries: Vec<QueryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryEntry {
    id: String,
    concepts: [ConceptId; 2],
    scenario: Scenario,
    gt_mask: Vec<f64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json`, `concepts.qsfm` and two feature files per video into `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    corpus.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = corpus.manifest(|v, kind| format!("{v}.{kind}"));
    write_feature_matrix(&dir.join(&manifest.concepts.path), &corpus.concepts.embeddings)?;
    for (v, entry) in corpus.videos.iter().zip(&manifest.videos) {
        write_feature_matrix(&dir.join(&entry.frame_features), &v.frame_feats)?;
        write_feature_matrix(&dir.join(&entry.shot_features), &v.shot_feats)?;
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    crate::io::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Loads a corpus from a manifest path, or from a directory containing `manifest.json`.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest_path =
        if manifest_path.is_dir() { manifest_path.join(MANIFEST_FILE) } else { manifest_path.to_path_buf() };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "{}: expected {MANIFEST_FORMAT} version {MANIFEST_VERSION}, found {} version {}",
            manifest_path.display(),
            m.format,
            m.version
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let embeddings = load_feature_matrix(&base.join(&m.concepts.path))?;
    if embeddings.cols() != m.d_text {
        return Err(Error::Format(format!(
            "concept table has {} columns, manifest declares d_text = {}",
            embeddings.cols(),
            m.d_text
        )));
    }
    let concepts = ConceptTable { names: m.concepts.names, embeddings };
    let mut videos = Vec::with_capacity(m.videos.len());
    for v in m.videos {
        let frame_feats = load_feature_matrix(&base.join(&v.frame_features))?;
        let shot_feats = load_feature_matrix(&base.join(&v.shot_features))?;
        let queries = v
            .queries
            .into_iter()
            .map(|q| AnnotatedQuery {
                query: Query { id: q.id, concept_a: q.concepts[0], concept_b: q.concepts[1], scenario: q.scenario },
                gt_mask: q.gt_mask,
            })
            .collect();
        let shot_concepts = v
            .shot_concepts
            .into_iter()
            .map(|mut cs| {
                cs.sort_unstable();
                cs.dedup();
                cs
            })
            .collect();
        videos.push(Video { id: v.id, split: v.split, frame_feats, shot_feats, shot_concepts, queries });
    }
    let corpus = Corpus { d_frame: m.d_frame, d_shot: m.d_shot, concepts, videos, rng: m.rng };
    corpus.validate()?;
    Ok(corpus)
}
