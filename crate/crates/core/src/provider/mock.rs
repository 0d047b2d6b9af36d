//! Deterministic provider doubles for offline runs and tests.

use sha2::{Digest, Sha256};

use super::{ChiefComplaintProvider, CompletionProvider, Embedder, IntentClassifier, LogProbScorer, ProviderError};
use crate::corpus::DEMO_DELIMITER;
use crate::generation::CompletionRequest;
use crate::metrics::{Action, IntentLabel, Target};
use crate::vector::{mock_embed, Vector};

pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

const REPLY_BANK: &[&str] = &[
    "这种情况持续多久了？有没有发烧？",
    "建议先做个胃镜检查，明确一下病因。",
    "平时饮食要清淡，避免辛辣刺激，注意休息。",
    "大便是什么颜色？有没有黏液或者血？",
    "可以先口服奥美拉唑，观察一下症状变化。",
    "之前做过什么检查吗？有没有吃过药？",
    "考虑是肠胃炎，注意补液，多喝水。",
    "疼痛的位置在哪里？是持续性的还是阵发性的？",
];

/// Greedy-style completion double.
///
/// With demonstrations in the prompt it imitates the first one by replying
/// with that example's last doctor line; otherwise it picks a canned reply
/// keyed by a hash of the prompt.
#[derive(Debug, Clone)]
pub struct MockCompletion {
    pub doctor_prefix: String,
    pub seed: u64,
}

impl Default for MockCompletion {
    fn default() -> Self {
        Self {
            doctor_prefix: "医生：".to_string(),
            seed: 0,
        }
    }
}

impl MockCompletion {
    fn imitate(&self, prompt: &str) -> Option<String> {
        if !prompt.contains(DEMO_DELIMITER) {
            return None;
        }
        let first_block = prompt.split(DEMO_DELIMITER).next()?;
        first_block
            .lines()
            .rev()
            .find_map(|line| line.strip_prefix(self.doctor_prefix.as_str()))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    }
}

impl CompletionProvider for MockCompletion {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let reply = self.imitate(&request.prompt_text).unwrap_or_else(|| {
            let h = stable_hash(&[&self.seed.to_le_bytes(), request.prompt_text.as_bytes()]);
            REPLY_BANK[(h % REPLY_BANK.len() as u64) as usize].to_string()
        });
        Ok(reply.chars().take(request.max_new_chars).collect())
    }
}

/// Scores each response character by whether it occurs in the history:
/// `ln 0.5` when it does, `ln 0.1` otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl LogProbScorer for OverlapScorer {
    fn token_logprobs(&self, history: &str, response: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(response
            .chars()
            .map(|c| if history.contains(c) { 0.5f64.ln() } else { 0.1f64.ln() })
            .collect())
    }
}

/// Assigns `-0.01 * i` to the i-th response character (1-based).
#[derive(Debug, Clone, Copy, Default)]
pub struct CharIndexScorer;

impl LogProbScorer for CharIndexScorer {
    fn token_logprobs(&self, _history: &str, response: &str) -> Result<Vec<f64>, ProviderError> {
        Ok((1..=response.chars().count()).map(|i| -0.01 * i as f64).collect())
    }
}

/// Question mark anywhere ⇒ Request/Symptom, otherwise Inform/MedicalAdvice.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleIntentClassifier;

impl IntentClassifier for RuleIntentClassifier {
    fn classify(&self, _history: &str, response: &str) -> Result<IntentLabel, ProviderError> {
        let label = if response.contains('？') || response.contains('?') {
            IntentLabel::new(Action::Request, Target::Symptom)
        } else {
            IntentLabel::new(Action::Inform, Target::MedicalAdvice)
        };
        Ok(label.expect("table pair"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError> {
        Ok(texts.iter().map(|t| mock_embed(t, self.dim, self.seed)).collect())
    }
}

/// Returns the first history line with its role prefix removed, cut to
/// `max_chars`.
#[derive(Debug, Clone)]
pub struct FirstLineSummarizer {
    pub max_chars: usize,
    pub prefixes: Vec<String>,
}

impl ChiefComplaintProvider for FirstLineSummarizer {
    fn chief_complaint(&self, history: &str) -> Result<String, ProviderError> {
        let line = history.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let line = self
            .prefixes
            .iter()
            .find_map(|p| line.strip_prefix(p.as_str()))
            .unwrap_or(line);
        let summary: String = line.chars().take(self.max_chars).collect();
        if summary.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(summary)
    }
}
