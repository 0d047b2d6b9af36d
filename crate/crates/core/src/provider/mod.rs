//! Boundaries around every neural component.
//!
//! Real models are reached over HTTP ([`http::HttpProvider`]); tests and
//! offline runs use the deterministic doubles in [`mock`].

pub mod http;
pub mod mock;

use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::generation::CompletionRequest;
use crate::metrics::IntentLabel;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Transient failure (connection error, HTTP 429 or 5xx).
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("request exceeds the provider budget: {0}")]
    BudgetExceeded(String),
    #[error("provider rejected the request (status {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable(_))
    }
}

pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

/// Natural-log probability of each response token given the history.
pub trait LogProbScorer: Send + Sync {
    fn token_logprobs(&self, history: &str, response: &str) -> Result<Vec<f64>, ProviderError>;
}

pub trait IntentClassifier: Send + Sync {
    fn classify(&self, history: &str, response: &str) -> Result<IntentLabel, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError>;
}

pub trait ChiefComplaintProvider: Send + Sync {
    fn chief_complaint(&self, history: &str) -> Result<String, ProviderError>;
}

/// Exponential backoff for retryable provider errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
