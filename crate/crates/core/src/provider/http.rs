//! JSON-over-HTTP client for model sidecars.
//!
//! | route                  | request                                   | response                      |
//! |------------------------|-------------------------------------------|-------------------------------|
//! | `/v1/complete`         | `{"prompt", "max_new_chars", "greedy"}`   | `{"text"}`                    |
//! | `/v1/logprobs`         | `{"history", "response"}`                 | `{"token_logprobs": [..]}`    |
//! | `/v1/intent`           | `{"history", "response"}`                 | `{"label": "Action/Target"}`  |
//! | `/v1/embed`            | `{"texts": [..]}`                         | `{"vectors": [[..], ..]}`     |
//! | `/v1/chief_complaint`  | `{"history"}`                             | `{"summary"}`                 |
//!
//! Log-probabilities are natural-log. HTTP 429 and 5xx are retryable, 413
//! means the request is over the model budget, any other 4xx is fatal.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ChiefComplaintProvider, CompletionProvider, Embedder, IntentClassifier, LogProbScorer, ProviderError};
use crate::generation::CompletionRequest;
use crate::metrics::IntentLabel;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteBody {
    pub prompt: String,
    pub max_new_chars: usize,
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteReply {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBody {
    pub history: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsReply {
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentReply {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedBody {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBody {
    pub history: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReply {
    pub summary: String,
}

/// One sidecar base URL serving every route. Each call is a single attempt;
/// callers apply their [`super::RetryPolicy`].
#[derive(Debug, Clone)]
pub struct HttpProvider {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R, ProviderError> {
        let url = format!("{}{}", self.base_url, route);
        let mut response = self.agent.post(&url).send_json(body).map_err(map_error)?;
        response
            .body_mut()
            .read_json::<R>()
            .map_err(|e| ProviderError::InvalidResponse(format!("{route}: {e}")))
    }
}

fn map_error(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(429) => ProviderError::Unavailable("HTTP 429".into()),
        ureq::Error::StatusCode(code) if (500..600).contains(&code) => {
            ProviderError::Unavailable(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(413) => ProviderError::BudgetExceeded("HTTP 413".into()),
        ureq::Error::StatusCode(code) => ProviderError::Rejected {
            status: code,
            message: format!("HTTP {code}"),
        },
        other => ProviderError::Unavailable(other.to_string()),
    }
}

impl CompletionProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.base_url
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = CompleteBody {
            prompt: request.prompt_text.clone(),
            max_new_chars: request.max_new_chars,
            greedy: request.greedy,
        };
        let reply: CompleteReply = self.post("/v1/complete", &body)?;
        Ok(reply.text)
    }
}

impl LogProbScorer for HttpProvider {
    fn token_logprobs(&self, history: &str, response: &str) -> Result<Vec<f64>, ProviderError> {
        let body = PairBody {
            history: history.to_string(),
            response: response.to_string(),
        };
        let reply: LogprobsReply = self.post("/v1/logprobs", &body)?;
        Ok(reply.token_logprobs)
    }
}

impl IntentClassifier for HttpProvider {
    fn classify(&self, history: &str, response: &str) -> Result<IntentLabel, ProviderError> {
        let body = PairBody {
            history: history.to_string(),
            response: response.to_string(),
        };
        let reply: IntentReply = self.post("/v1/intent", &body)?;
        reply
            .label
            .parse()
            .map_err(|e| ProviderError::InvalidResponse(format!("/v1/intent: {e}")))
    }
}

impl Embedder for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, ProviderError> {
        let body = EmbedBody { texts: texts.to_vec() };
        let reply: EmbedReply = self.post("/v1/embed", &body)?;
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "/v1/embed: {} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        reply
            .vectors
            .into_iter()
            .map(|v| Vector::new(v).map_err(|e| ProviderError::InvalidResponse(format!("/v1/embed: {e}"))))
            .collect()
    }
}

impl ChiefComplaintProvider for HttpProvider {
    fn chief_complaint(&self, history: &str) -> Result<String, ProviderError> {
        let body = HistoryBody {
            history: history.to_string(),
        };
        let reply: SummaryReply = self.post("/v1/chief_complaint", &body)?;
        Ok(reply.summary)
    }
}
