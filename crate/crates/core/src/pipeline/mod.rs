//! End-to-end orchestration: embeddings, symptom index, retrieval, prompting,
//! completion and reranking for one target history, plus batch runs,
//! offline evaluation and an interactive REPL built on top.

mod chat;
mod config;
mod eval;
mod run;

pub use chat::{chat_repl, ChatTranscript, ChatTurn};
pub use config::{ProviderConfig, ProviderKind, RunConfig, TemplatePaths, VectorPaths};
pub use eval::{evaluate_files, evaluate_run, load_glossary, read_pairs, report_for, write_report, PairLine};
pub use run::{
    eval_targets, read_records, run_experiment, RecordEntry, RunRecord, RunSummary, SkippedRecord, CONFIG_FILE,
    LOG_FILE, RECORDS_FILE, REPORT_FILE,
};

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{last_rounds, Corpus, CorpusError, DialogueTurn, TurnRenderer};
use crate::generation::{complete_all, GenerationConfig, SlotError};
use crate::metrics::MetricError;
use crate::promptgen::{
    compress_example, generate_prompt_set, CompressedExample, ExemplarSource, Prompt, PromptError, PromptStrategy,
    PromptTemplates,
};
use crate::provider::http::HttpProvider;
use crate::provider::mock::{
    stable_hash, FirstLineSummarizer, MockCompletion, MockEmbedder, OverlapScorer, RuleIntentClassifier,
};
use crate::provider::{
    ChiefComplaintProvider, CompletionProvider, Embedder, IntentClassifier, LogProbScorer, ProviderError, RetryPolicy,
};
use crate::ranking::{score_candidate, select_best, RankedResponse};
use crate::retrieval::{
    build_symptom_index, check_no_leakage, global_retrieve, local_candidates, local_primary_select,
    local_secondary_select, resolve_chief_complaint, ComplaintOrigin, ExampleRef, IndexConfig, RetrievalError,
    SymptomIndex,
};
use crate::vector::{Vector, VectorError, VectorStore};

const EMBED_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no {kind} vector for {key:?} and no embedder configured")]
    MissingVector { kind: &'static str, key: String },
    #[error("every candidate failed: {0}")]
    NoCandidates(String),
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("glossary missing: {0}")]
    MissingGlossary(String),
    #[error("{skipped} skipped samples exceed the failure budget of {budget}")]
    FailureBudget { skipped: usize, budget: usize },
    #[error("malformed {path} line {line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 config, 2 data, 3 provider failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Provider(_) | PipelineError::FailureBudget { .. } | PipelineError::NoCandidates(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

pub struct Providers {
    pub completion: Box<dyn CompletionProvider>,
    pub scorer: Box<dyn LogProbScorer>,
    pub classifier: Box<dyn IntentClassifier>,
    /// Fallback for vectors missing from the precomputed files.
    pub embedder: Option<Box<dyn Embedder>>,
    pub complaint: Option<Box<dyn ChiefComplaintProvider>>,
}

impl Providers {
    pub fn mock(seed: u64, dim: usize) -> Self {
        let renderer = TurnRenderer::default();
        Self {
            completion: Box::new(MockCompletion {
                doctor_prefix: renderer.doctor_prefix.clone(),
                seed,
            }),
            scorer: Box::new(OverlapScorer),
            classifier: Box::new(RuleIntentClassifier),
            embedder: Some(Box::new(MockEmbedder { dim, seed })),
            complaint: Some(Box::new(FirstLineSummarizer {
                max_chars: crate::retrieval::FALLBACK_COMPLAINT_CHARS,
                prefixes: vec![renderer.patient_prefix, renderer.doctor_prefix],
            })),
        }
    }

    pub fn http(endpoint: &str, timeout: Duration) -> Self {
        let p = HttpProvider::new(endpoint, timeout);
        Self {
            completion: Box::new(p.clone()),
            scorer: Box::new(p.clone()),
            classifier: Box::new(p.clone()),
            embedder: Some(Box::new(p.clone())),
            complaint: Some(Box::new(p)),
        }
    }

    pub fn from_config(config: &RunConfig) -> Self {
        match config.providers.kind {
            ProviderKind::Mock => Self::mock(config.seed, config.providers.mock_dim),
            ProviderKind::Http => Self::http(
                config.providers.endpoint.as_deref().unwrap_or_default(),
                Duration::from_secs(config.providers.timeout_secs),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    History,
    Complaint,
    Recent,
}

impl VectorKind {
    fn as_str(self) -> &'static str {
        match self {
            VectorKind::History => "history",
            VectorKind::Complaint => "complaint",
            VectorKind::Recent => "recent",
        }
    }
}

/// Precomputed vectors first, then the embedder.
pub struct Embeddings {
    stores: BTreeMap<&'static str, VectorStore>,
    retry: RetryPolicy,
}

impl Embeddings {
    pub fn load(paths: &VectorPaths, retry: RetryPolicy) -> Result<Self, PipelineError> {
        let mut stores = BTreeMap::new();
        for (kind, path) in [
            (VectorKind::History, &paths.history),
            (VectorKind::Complaint, &paths.complaint),
            (VectorKind::Recent, &paths.recent),
        ] {
            if let Some(path) = path {
                stores.insert(kind.as_str(), VectorStore::load_jsonl(path)?);
            }
        }
        Ok(Self { stores, retry })
    }

    pub fn resolve(
        &self,
        kind: VectorKind,
        items: &[(String, String)],
        embedder: Option<&dyn Embedder>,
    ) -> Result<Vec<Vector>, PipelineError> {
        let store = self.stores.get(kind.as_str());
        let mut out: Vec<Option<Vector>> = items
            .iter()
            .map(|(key, _)| store.and_then(|s| s.get(key)).cloned())
            .collect();
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let Some(embedder) = embedder else {
                return Err(PipelineError::MissingVector {
                    kind: kind.as_str(),
                    key: items[missing[0]].0.clone(),
                });
            };
            for chunk in missing.chunks(EMBED_BATCH) {
                let texts: Vec<String> = chunk.iter().map(|&i| items[i].1.clone()).collect();
                let vectors = self.retry.run(|| embedder.embed(&texts))?;
                if vectors.len() != texts.len() {
                    return Err(ProviderError::InvalidResponse(format!(
                        "asked for {} embeddings, got {}",
                        texts.len(),
                        vectors.len()
                    ))
                    .into());
                }
                for (&i, v) in chunk.iter().zip(vectors) {
                    out[i] = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

/// A history to respond to. `id` keys precomputed vectors and is excluded
/// from retrieval.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub id: &'a str,
    pub history: &'a [DialogueTurn],
    pub chief_complaint: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub history: String,
    pub chief_complaint: String,
    pub complaint_origin: ComplaintOrigin,
    pub prompts: Vec<Prompt>,
    pub exemplars: Vec<ExampleRef>,
    /// Rank 1 first.
    pub ranked: Vec<RankedResponse>,
    pub slot_errors: Vec<SlotError>,
    pub warnings: Vec<String>,
}

impl Response {
    pub fn best(&self) -> &RankedResponse {
        &self.ranked[0]
    }
}

/// Everything shared across targets; immutable once built.
pub struct Pipeline {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub providers: Providers,
    pub renderer: TurnRenderer,
    pub templates: PromptTemplates,
    pub session_vectors: VectorStore,
    pub index: Option<SymptomIndex>,
    embeddings: Embeddings,
    train_complaints: BTreeMap<String, String>,
    generation: GenerationConfig,
    retry: RetryPolicy,
}

impl Pipeline {
    pub fn new(config: RunConfig, corpus: Corpus, providers: Providers) -> Result<Self, PipelineError> {
        config.validate()?;
        let renderer = TurnRenderer::default();
        let templates = PromptTemplates::load(
            config.templates.instruct.as_deref(),
            config.templates.in_context.as_deref(),
            &config.doctor_cue,
        )?;
        let retry = config.retry();
        let embeddings = Embeddings::load(&config.vectors, retry)?;
        let embedder = providers.embedder.as_deref();

        let mut train_complaints = BTreeMap::new();
        let mut history_items = Vec::new();
        for s in corpus.split(crate::corpus::Split::Train) {
            let (cc, _) = resolve_chief_complaint(
                s.chief_complaint.as_deref(),
                &s.turns,
                providers.complaint.as_deref(),
                &renderer,
            );
            train_complaints.insert(s.id.clone(), cc);
            history_items.push((s.id.clone(), renderer.render(&s.turns)));
        }
        let complaint_items: Vec<(String, String)> =
            train_complaints.iter().map(|(k, v)| (k.clone(), v.clone())).collect();

        let session_vectors = to_store(
            &history_items,
            embeddings.resolve(VectorKind::History, &history_items, embedder)?,
        )?;
        let complaint_vectors = to_store(
            &complaint_items,
            embeddings.resolve(VectorKind::Complaint, &complaint_items, embedder)?,
        )?;

        let index = match &config.index {
            Some(path) => {
                let index = SymptomIndex::load(path)?;
                validate_index(&index, &corpus, complaint_vectors.dim())?;
                Some(index)
            }
            None if complaint_vectors.is_empty() => {
                log::warn!("no training sessions; local strategies will fall back to the instruct prompt");
                None
            }
            None => Some(build_symptom_index(
                &corpus,
                &complaint_vectors,
                index_config(&config, complaint_vectors.len()),
            )?),
        };

        let generation = config.generation();
        Ok(Self {
            config,
            corpus,
            providers,
            renderer,
            templates,
            session_vectors,
            index,
            embeddings,
            train_complaints,
            generation,
            retry,
        })
    }

    pub fn retry(&self) -> RetryPolicy {
        self.retry
    }

    /// Retrieval, prompting, completion and reranking for one history.
    pub fn respond(&self, target: Target<'_>) -> Result<Response, PipelineError> {
        let history = self.renderer.render(target.history);
        let (chief_complaint, complaint_origin) = resolve_chief_complaint(
            target.chief_complaint,
            target.history,
            self.providers.complaint.as_deref(),
            &self.renderer,
        );
        let recent = self
            .renderer
            .render(last_rounds(target.history, self.config.recent_rounds));
        let embedder = self.providers.embedder.as_deref();
        let key = target.id.to_string();
        let one = |kind, text: &str| -> Result<Vector, PipelineError> {
            Ok(self
                .embeddings
                .resolve(kind, &[(key.clone(), text.to_string())], embedder)?
                .remove(0))
        };
        let strategies = self.config.strategy_set();
        let needs = |s: PromptStrategy| strategies.contains(&s);
        let query = if needs(PromptStrategy::GlobalView) {
            Some(one(VectorKind::History, &history)?)
        } else {
            None
        };
        let complaint = if needs(PromptStrategy::LocalPrimary) || needs(PromptStrategy::LocalSecondary) {
            Some(one(VectorKind::Complaint, &chief_complaint)?)
        } else {
            None
        };
        let recent = if needs(PromptStrategy::LocalSecondary) {
            Some(one(VectorKind::Recent, &recent)?)
        } else {
            None
        };

        let retriever = Retriever {
            pipeline: self,
            exclude: target.id,
            query,
            complaint,
            recent,
            seed: stable_hash(&[&self.config.seed.to_le_bytes(), history.as_bytes()]),
            used: RefCell::new(Vec::new()),
        };
        let set = generate_prompt_set(target.history, &retriever, &strategies, &self.templates, &self.renderer)?;
        let exemplars = retriever.used.into_inner();

        let mut slot_errors = Vec::new();
        let mut scored = Vec::new();
        for result in complete_all(
            self.providers.completion.as_ref(),
            &set.prompts,
            &self.generation,
            &self.retry,
        ) {
            let candidate = match result {
                Ok(c) => c,
                Err(e) => {
                    slot_errors.push(e);
                    continue;
                }
            };
            match score_candidate(self.providers.scorer.as_ref(), &history, &candidate, &self.retry) {
                Ok(score) => scored.push((candidate, score)),
                Err(e) => slot_errors.push(SlotError {
                    strategy: candidate.strategy,
                    error: format!("scoring: {e}"),
                }),
            }
        }
        if scored.is_empty() {
            let detail: Vec<String> = slot_errors
                .iter()
                .map(|e| format!("{}: {}", e.strategy, e.error))
                .collect();
            return Err(PipelineError::NoCandidates(detail.join("; ")));
        }
        let ranked = select_best(scored).map_err(|e| PipelineError::NoCandidates(e.to_string()))?;
        Ok(Response {
            history,
            chief_complaint,
            complaint_origin,
            prompts: set.prompts,
            exemplars,
            ranked,
            slot_errors,
            warnings: set.warnings,
        })
    }
}

fn to_store(items: &[(String, String)], vectors: Vec<Vector>) -> Result<VectorStore, PipelineError> {
    let mut store = VectorStore::new(vectors.first().map_or(0, Vector::dim));
    for ((key, _), v) in items.iter().zip(vectors) {
        store.insert(key.clone(), v)?;
    }
    Ok(store)
}

/// Precomputable vectors, keyed by session id.
pub struct CorpusVectors {
    pub history: VectorStore,
    pub complaint: VectorStore,
    pub recent: VectorStore,
}

/// Embeds everything a run over `corpus` would embed on the fly: training
/// sessions whole, evaluation targets without their final doctor turn.
pub fn embed_corpus(
    config: &RunConfig,
    corpus: &Corpus,
    providers: &Providers,
) -> Result<CorpusVectors, PipelineError> {
    let embedder = providers
        .embedder
        .as_deref()
        .ok_or_else(|| PipelineError::Config("no embedding provider configured".into()))?;
    let embeddings = Embeddings {
        stores: BTreeMap::new(),
        retry: config.retry(),
    };
    let renderer = TurnRenderer::default();
    let complaint_of = |field: Option<&str>, turns: &[DialogueTurn]| {
        resolve_chief_complaint(field, turns, providers.complaint.as_deref(), &renderer).0
    };
    let (mut history, mut complaint, mut recent) = (Vec::new(), Vec::new(), Vec::new());
    for s in corpus.split(crate::corpus::Split::Train) {
        history.push((s.id.clone(), renderer.render(&s.turns)));
        complaint.push((s.id.clone(), complaint_of(s.chief_complaint.as_deref(), &s.turns)));
    }
    for s in eval_targets(corpus, &config.eval_splits) {
        let (turns, _) = s.history_and_gold().expect("eligible target");
        history.push((s.id.clone(), renderer.render(turns)));
        complaint.push((s.id.clone(), complaint_of(s.chief_complaint.as_deref(), turns)));
        recent.push((s.id.clone(), renderer.render(last_rounds(turns, config.recent_rounds))));
    }
    let build = |kind, items: &[(String, String)]| -> Result<VectorStore, PipelineError> {
        to_store(items, embeddings.resolve(kind, items, Some(embedder))?)
    };
    Ok(CorpusVectors {
        history: build(VectorKind::History, &history)?,
        complaint: build(VectorKind::Complaint, &complaint)?,
        recent: build(VectorKind::Recent, &recent)?,
    })
}

/// K is clamped to the number of training complaints.
fn index_config(config: &RunConfig, points: usize) -> IndexConfig {
    let k = config.k.min(points);
    if k < config.k {
        log::warn!(
            "k = {} exceeds the {points} training complaints; using k = {k}",
            config.k
        );
    }
    IndexConfig {
        k,
        iters: config.kmeans_iters,
        seed: config.seed,
    }
}

fn validate_index(index: &SymptomIndex, corpus: &Corpus, dim: usize) -> Result<(), PipelineError> {
    for id in index.members.values().flatten() {
        if !corpus.is_train(id) {
            return Err(RetrievalError::NotTrainSession(id.clone()).into());
        }
    }
    if let Some(c) = index.kmeans.centroids.first() {
        if dim != 0 && c.dim() != dim {
            return Err(VectorError::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            }
            .into());
        }
    }
    Ok(())
}

struct Retriever<'p> {
    pipeline: &'p Pipeline,
    exclude: &'p str,
    query: Option<Vector>,
    complaint: Option<Vector>,
    recent: Option<Vector>,
    seed: u64,
    used: RefCell<Vec<ExampleRef>>,
}

impl Retriever<'_> {
    fn candidates(&self) -> Result<BTreeSet<String>, RetrievalError> {
        let index = self.pipeline.index.as_ref().ok_or(RetrievalError::EmptyIndex)?;
        let complaint = self.complaint.as_ref().ok_or(RetrievalError::EmptyCandidates)?;
        local_candidates(complaint, index, self.pipeline.config.clusters_to_probe)
    }

    fn refs(&self, strategy: PromptStrategy) -> Result<Vec<ExampleRef>, RetrievalError> {
        let p = self.pipeline;
        let count = p.config.exemplar_count;
        let exclude = Some(self.exclude);
        match strategy {
            PromptStrategy::Vanilla => Ok(Vec::new()),
            PromptStrategy::GlobalView => {
                let query = self.query.as_ref().ok_or(RetrievalError::EmptyCandidates)?;
                global_retrieve(query, &p.session_vectors, count, exclude)
            }
            PromptStrategy::LocalPrimary => local_primary_select(&self.candidates()?, count, self.seed, exclude),
            PromptStrategy::LocalSecondary => {
                let recent = self.recent.as_ref().ok_or(RetrievalError::EmptyCandidates)?;
                local_secondary_select(recent, &self.candidates()?, &p.session_vectors, count, exclude)
            }
        }
    }
}

impl ExemplarSource for Retriever<'_> {
    fn exemplars(&self, strategy: PromptStrategy) -> Result<Vec<CompressedExample>, PromptError> {
        let refs = self.refs(strategy)?;
        check_no_leakage(&refs, &self.pipeline.corpus)?;
        let p = self.pipeline;
        let budget = p.config.budget();
        let mut out = Vec::with_capacity(refs.len());
        for r in &refs {
            let session = p
                .corpus
                .get(&r.session_id)
                .ok_or_else(|| RetrievalError::NotTrainSession(r.session_id.clone()))?;
            let complaint = p.train_complaints.get(&r.session_id).map_or("", String::as_str);
            out.push(compress_example(
                &r.session_id,
                &session.turns,
                complaint,
                &budget,
                &p.renderer,
            )?);
        }
        self.used.borrow_mut().extend(refs);
        Ok(out)
    }
}
