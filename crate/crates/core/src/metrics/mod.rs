//! Evaluation: ROUGE-L, Top-n Match micro-F1 over medical terms, intent
//! accuracy, response diversity, and dialogue-action distributions.

mod intent;
mod report;
mod rouge;
mod terms;
mod tnm;

pub use intent::{action_distribution, intent_accuracy, Action, IntentLabel, IntentPair, Target};
pub use report::{compute_report, diversity_count, EvalSample, MetricReport, TnmEntry};
pub use rouge::{lcs_len, rouge_l, rouge_units};
pub use terms::{
    expand_glossary, extract_terms, is_topn_match, top_n_set, TermExtractor, TermGlossary, TermMatcher, TermSet,
};
pub use tnm::{sample_counts, tnm_counts, tnm_f1, Prf, TermCounts};

use thiserror::Error;

use crate::provider::ProviderError;
use crate::vector::VectorError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("term {0:?} is not in the glossary")]
    UnknownTerm(String),
    #[error("n must be at least 1")]
    InvalidN,
    #[error("glossary term {0:?} has no vector")]
    MissingVectors(String),
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("invalid glossary: {0}")]
    InvalidGlossary(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
