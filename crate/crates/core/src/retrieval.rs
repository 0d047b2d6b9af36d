//! Exemplar retrieval from the training split.
//!
//! * Global view: nearest training dialogues to the whole target history.
//! * Local view: the chief complaint picks a symptom cluster (K-Means over
//!   training complaints), then either a seeded random draw from that cluster
//!   (local primary) or the cluster members nearest to the recent utterances
//!   (local secondary).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DialogueTurn, Role, TurnRenderer};
use crate::provider::ChiefComplaintProvider;
use crate::vector::{cosine, kmeans, nearest_where, KMeansResult, Vector, VectorError, VectorStore};

/// Length of the first-utterance fallback when no complaint is available.
pub const FALLBACK_COMPLAINT_CHARS: usize = 64;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("symptom index has no clusters")]
    EmptyIndex,
    #[error("no candidate examples")]
    EmptyCandidates,
    #[error("clusters_to_probe must be at least 1")]
    InvalidProbe,
    #[error("example count must be at least 1")]
    InvalidCount,
    #[error("candidate {0:?} has no session vector")]
    UnknownCandidate(String),
    #[error("{0:?} is not a training session")]
    NotTrainSession(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl RetrievalError {
    /// True when retrieval failed only because there was nothing to retrieve.
    pub fn is_empty_result(&self) -> bool {
        matches!(
            self,
            RetrievalError::EmptyIndex
                | RetrievalError::EmptyCandidates
                | RetrievalError::Vector(VectorError::EmptyStore)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    Global,
    LocalPrimary,
    LocalSecondary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRef {
    pub session_id: String,
    pub score: f64,
    pub source: ExampleSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
}

/// K-Means over training chief-complaint vectors; each centroid indexes the
/// sessions assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomIndex {
    pub config: IndexConfig,
    pub kmeans: KMeansResult,
    pub members: BTreeMap<usize, Vec<String>>,
}

pub fn build_symptom_index(
    corpus: &Corpus,
    complaint_vectors: &VectorStore,
    config: IndexConfig,
) -> Result<SymptomIndex, RetrievalError> {
    if let Some(bad) = complaint_vectors.keys().find(|k| !corpus.is_train(k)) {
        return Err(RetrievalError::NotTrainSession(bad.to_string()));
    }
    let result = kmeans(complaint_vectors, config.k, config.iters, config.seed)?;
    let mut members: BTreeMap<usize, Vec<String>> = (0..result.k()).map(|c| (c, Vec::new())).collect();
    for (key, &cluster) in &result.assignments {
        members.entry(cluster).or_default().push(key.clone());
    }
    Ok(SymptomIndex {
        config,
        kmeans: result,
        members,
    })
}

impl SymptomIndex {
    pub fn k(&self) -> usize {
        self.kmeans.k()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Training sessions nearest to the full target history.
pub fn global_retrieve(
    target_history: &Vector,
    session_vectors: &VectorStore,
    top_k: usize,
    exclude: Option<&str>,
) -> Result<Vec<ExampleRef>, RetrievalError> {
    let hits = nearest_where(target_history, session_vectors, top_k, |k| Some(k) != exclude)?;
    Ok(refs(hits, ExampleSource::Global))
}

/// Members of the `clusters_to_probe` centroids most cosine-similar to the complaint.
pub fn local_candidates(
    complaint: &Vector,
    index: &SymptomIndex,
    clusters_to_probe: usize,
) -> Result<BTreeSet<String>, RetrievalError> {
    if clusters_to_probe == 0 {
        return Err(RetrievalError::InvalidProbe);
    }
    if index.kmeans.centroids.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let mut scored = Vec::with_capacity(index.k());
    for (c, centroid) in index.kmeans.centroids.iter().enumerate() {
        let score = match cosine(complaint, centroid) {
            Ok(s) => s,
            // a centroid can cancel out to zero; rank it last
            Err(VectorError::ZeroVector) if !complaint.is_zero() => f64::NEG_INFINITY,
            Err(e) => return Err(e.into()),
        };
        scored.push((c, score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .iter()
        .take(clusters_to_probe)
        .flat_map(|(c, _)| index.members.get(c).into_iter().flatten().cloned())
        .collect())
}

/// Candidates nearest to the recent-utterance query.
pub fn local_secondary_select(
    recent: &Vector,
    candidates: &BTreeSet<String>,
    session_vectors: &VectorStore,
    count: usize,
    exclude: Option<&str>,
) -> Result<Vec<ExampleRef>, RetrievalError> {
    if count == 0 {
        return Err(RetrievalError::InvalidCount);
    }
    if let Some(missing) = candidates.iter().find(|c| !session_vectors.contains(c)) {
        return Err(RetrievalError::UnknownCandidate(missing.clone()));
    }
    if !candidates.iter().any(|c| Some(c.as_str()) != exclude) {
        return Err(RetrievalError::EmptyCandidates);
    }
    let hits = nearest_where(recent, session_vectors, count, |k| {
        candidates.contains(k) && Some(k) != exclude
    })?;
    Ok(refs(hits, ExampleSource::LocalSecondary))
}

/// Seeded uniform draw without replacement. Scores are 0.
pub fn local_primary_select(
    candidates: &BTreeSet<String>,
    count: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<ExampleRef>, RetrievalError> {
    if count == 0 {
        return Err(RetrievalError::InvalidCount);
    }
    let mut pool: Vec<&String> = candidates.iter().filter(|c| Some(c.as_str()) != exclude).collect();
    if pool.is_empty() {
        return Err(RetrievalError::EmptyCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = count.min(pool.len());
    let (chosen, _) = pool.partial_shuffle(&mut rng, take);
    Ok(chosen
        .iter()
        .map(|id| ExampleRef {
            session_id: (*id).clone(),
            score: 0.0,
            source: ExampleSource::LocalPrimary,
        })
        .collect())
}

fn refs(hits: Vec<(String, f64)>, source: ExampleSource) -> Vec<ExampleRef> {
    hits.into_iter()
        .map(|(session_id, score)| ExampleRef {
            session_id,
            score,
            source,
        })
        .collect()
}

/// Fails on the first reference outside the training split.
pub fn check_no_leakage(refs: &[ExampleRef], corpus: &Corpus) -> Result<(), RetrievalError> {
    match refs.iter().find(|r| !corpus.is_train(&r.session_id)) {
        Some(r) => Err(RetrievalError::NotTrainSession(r.session_id.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplaintOrigin {
    Session,
    Provider,
    FirstUtterance,
}

/// Chief complaint in priority order: the session's own field, the provider,
/// then the first patient utterance cut to [`FALLBACK_COMPLAINT_CHARS`].
pub fn resolve_chief_complaint(
    field: Option<&str>,
    turns: &[DialogueTurn],
    provider: Option<&dyn ChiefComplaintProvider>,
    renderer: &TurnRenderer,
) -> (String, ComplaintOrigin) {
    if let Some(cc) = field.map(str::trim).filter(|s| !s.is_empty()) {
        return (cc.to_string(), ComplaintOrigin::Session);
    }
    if let Some(provider) = provider {
        match provider.chief_complaint(&renderer.render(turns)) {
            Ok(summary) if !summary.trim().is_empty() => {
                return (summary.trim().to_string(), ComplaintOrigin::Provider)
            }
            Ok(_) => log::warn!("chief-complaint provider returned an empty summary"),
            Err(e) => log::warn!("chief-complaint provider failed: {e}"),
        }
    }
    let first = turns
        .iter()
        .find(|t| t.role == Role::Patient)
        .or_else(|| turns.first())
        .map(|t| t.text.trim().chars().take(FALLBACK_COMPLAINT_CHARS).collect())
        .unwrap_or_default();
    (first, ComplaintOrigin::FirstUtterance)
}
