use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::Split;
use crate::generation::{GenerationConfig, DEFAULT_MAX_NEW_CHARS};
use crate::promptgen::{CompressionBudget, PromptStrategy};
use crate::provider::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Sidecar base URL; required for `http`.
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    /// Dimension of the mock embedder.
    pub mock_dim: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 200,
            mock_dim: 64,
        }
    }
}

/// Precomputed embeddings keyed by session id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorPaths {
    /// Rendered history: the whole dialogue for training sessions, the
    /// dialogue minus its final doctor turn for evaluation targets.
    pub history: Option<PathBuf>,
    pub complaint: Option<PathBuf>,
    /// Last `recent_rounds` rounds of the target history.
    pub recent: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub instruct: Option<PathBuf>,
    pub in_context: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// One term per line.
    pub glossary: Option<PathBuf>,
    pub term_vectors: Option<PathBuf>,
    pub vectors: VectorPaths,
    pub index: Option<PathBuf>,
    pub templates: TemplatePaths,
    pub providers: ProviderConfig,
    pub m: usize,
    pub window_budget: usize,
    pub exemplar_count: usize,
    pub example_cap: usize,
    pub k: usize,
    pub kmeans_iters: usize,
    pub clusters_to_probe: usize,
    pub recent_rounds: usize,
    pub tnm_ns: Vec<usize>,
    pub seed: u64,
    pub strategies: Vec<PromptStrategy>,
    pub max_new_chars: usize,
    pub greedy: bool,
    pub doctor_cue: String,
    /// Worker threads; 0 means one per CPU.
    pub workers: usize,
    pub eval_splits: Vec<Split>,
    /// Skipped samples tolerated before the run aborts.
    pub failure_budget: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            glossary: None,
            term_vectors: None,
            vectors: VectorPaths::default(),
            index: None,
            templates: TemplatePaths::default(),
            providers: ProviderConfig::default(),
            m: 20,
            window_budget: 120,
            exemplar_count: 4,
            example_cap: 140,
            k: 100,
            kmeans_iters: 20,
            clusters_to_probe: 1,
            recent_rounds: 2,
            tnm_ns: vec![1, 3, 5],
            seed: 0,
            strategies: PromptStrategy::ALL.to_vec(),
            max_new_chars: DEFAULT_MAX_NEW_CHARS,
            greedy: true,
            doctor_cue: "医生：".into(),
            workers: 0,
            eval_splits: vec![Split::Valid, Split::Test],
            failure_budget: None,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        for p in [
            &mut self.glossary,
            &mut self.term_vectors,
            &mut self.vectors.history,
            &mut self.vectors.complaint,
            &mut self.vectors.recent,
            &mut self.index,
            &mut self.templates.instruct,
            &mut self.templates.in_context,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if self.corpus.as_os_str().is_empty() {
            return fail("corpus path is required");
        }
        if self.exemplar_count == 0 {
            return fail("exemplar_count must be at least 1");
        }
        if self.k == 0 || self.clusters_to_probe == 0 {
            return fail("k and clusters_to_probe must be at least 1");
        }
        if self.recent_rounds == 0 {
            return fail("recent_rounds must be at least 1");
        }
        if self.tnm_ns.is_empty() || self.tnm_ns.contains(&0) {
            return fail("tnm_ns must be non-empty with every n >= 1");
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required");
        }
        if self.eval_splits.is_empty() {
            return fail("at least one evaluation split is required");
        }
        if self.max_new_chars == 0 {
            return fail("max_new_chars must be at least 1");
        }
        if self.doctor_cue.is_empty() {
            return fail("doctor_cue must be non-empty");
        }
        match self.providers.kind {
            ProviderKind::Http if self.providers.endpoint.as_deref().unwrap_or("").is_empty() => {
                fail("http providers need an endpoint")
            }
            ProviderKind::Mock if self.providers.mock_dim == 0 => fail("mock_dim must be at least 1"),
            _ => Ok(()),
        }
    }

    pub fn budget(&self) -> CompressionBudget {
        CompressionBudget {
            abstract_chars: self.m,
            window_chars: self.window_budget,
            example_cap: self.example_cap,
        }
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            max_new_chars: self.max_new_chars,
            greedy: self.greedy,
            doctor_cue: self.doctor_cue.clone(),
            ..GenerationConfig::default()
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.providers.max_attempts,
            base_delay: Duration::from_millis(self.providers.backoff_ms),
        }
    }

    /// Requested strategies in declaration order, deduplicated.
    pub fn strategy_set(&self) -> Vec<PromptStrategy> {
        PromptStrategy::ALL
            .into_iter()
            .filter(|s| self.strategies.contains(s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_once_corpus_is_set() {
        let mut c = RunConfig::default();
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        c.corpus = "c.jsonl".into();
        c.validate().unwrap();
        c.exemplar_count = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn http_needs_endpoint() {
        let mut c = RunConfig {
            corpus: "c.jsonl".into(),
            ..RunConfig::default()
        };
        c.providers.kind = ProviderKind::Http;
        assert!(c.validate().is_err());
        c.providers.endpoint = Some("http://127.0.0.1:1".into());
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults_and_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"corpus": "data/c.jsonl", "k": 3, "providers": {"kind": "mock"}}"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.m, 20);
        assert_eq!(c.corpus, dir.path().join("data/c.jsonl"));
        fs::write(&path, r#"{"corpus": "c", "bogus": 1}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(PipelineError::Config(_))));
    }
}
