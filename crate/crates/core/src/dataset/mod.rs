//! Corpus files, query embeddings, batch sampling and the synthetic corpus.

mod batch;
mod corpus;
mod format;
mod synth;

pub use batch::{gamma_of, sample_batch, TrainingBatch};
pub use corpus::{
    load_corpus, write_corpus, AnnotatedQuery, ConceptId, ConceptTable, Corpus, Query, RngInfo, Scenario, ShotRecord,
    Split, Video, MANIFEST_FILE,
};
pub use format::{
    decode_f64, encode_f64, load_feature_matrix, write_feature_matrix, FeatureMatrix, HEADER_LEN, MAGIC, VERSION_F32,
    VERSION_F64,
};
pub use synth::{synth_corpus, SynthConfig};

use crate::error::Result;

/// Sum of the two concept embeddings, or zeros when neither concept occurs in the video.
pub fn embed_query(query: &Query, table: &ConceptTable) -> Result<Vec<f64>> {
    if query.scenario == Scenario::NonePresent {
        return Ok(vec![0.0; table.dim()]);
    }
    let a = table.embedding(query.concept_a)?;
    let b = table.embedding(query.concept_b)?;
    Ok(a.iter().zip(b).map(|(x, y)| f64::from(*x) + f64::from(*y)).collect())
}
