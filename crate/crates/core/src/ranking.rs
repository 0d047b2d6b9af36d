//! Perplexity-style reranking: a scorer model assigns each candidate the
//! negative mean log-probability of its tokens given the history, and the
//! lowest score wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::CandidateResponse;
use crate::provider::{LogProbScorer, ProviderError, RetryPolicy};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("no token log-probabilities")]
    EmptyLogProbs,
    #[error("log-probability {value} at position {index} is not a finite value <= 0")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("history and candidate text must be non-empty")]
    EmptyInput,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Natural-log token probabilities of one response, each finite and `<= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self, RankingError> {
        if values.is_empty() {
            return Err(RankingError::EmptyLogProbs);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
            return Err(RankingError::InvalidLogProb { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `-(1/l) Σ log p(r_i | r_<i, h)`.
pub fn response_score(logprobs: &TokenLogProbs) -> f64 {
    let values = logprobs.values();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    // -0.0 when every token is certain
    (-mean).max(0.0)
}

pub fn score_candidate(
    scorer: &dyn LogProbScorer,
    history: &str,
    candidate: &CandidateResponse,
    retry: &RetryPolicy,
) -> Result<f64, RankingError> {
    if history.trim().is_empty() || candidate.text.trim().is_empty() {
        return Err(RankingError::EmptyInput);
    }
    let raw = retry.run(|| scorer.token_logprobs(history, &candidate.text))?;
    Ok(response_score(&TokenLogProbs::new(raw)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResponse {
    pub candidate: CandidateResponse,
    pub score: f64,
    /// 1-based; rank 1 is the system output.
    pub rank: usize,
}

/// Orders candidates by ascending score, breaking ties by strategy order.
pub fn select_best(scored: Vec<(CandidateResponse, f64)>) -> Result<Vec<RankedResponse>, RankingError> {
    if scored.is_empty() {
        return Err(RankingError::NoCandidates);
    }
    let mut scored = scored;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.strategy.cmp(&b.0.strategy)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (candidate, score))| RankedResponse {
            candidate,
            score,
            rank: i + 1,
        })
        .collect())
}
