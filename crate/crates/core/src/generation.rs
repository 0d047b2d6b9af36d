//! One candidate response per prompt through a [`CompletionProvider`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DEMO_DELIMITER;
use crate::promptgen::{Prompt, PromptStrategy};
use crate::provider::{CompletionProvider, ProviderError, RetryPolicy};

pub const DEFAULT_MAX_NEW_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub max_new_chars: usize,
    pub greedy: bool,
}

impl CompletionRequest {
    pub fn new(prompt_text: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            max_new_chars: DEFAULT_MAX_NEW_CHARS,
            greedy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub strategy: PromptStrategy,
    pub text: String,
    pub provider_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_chars: usize,
    pub greedy: bool,
    /// Doctor cue the prompt ends with; stripped if the model repeats it.
    pub doctor_cue: String,
    /// Patient role prefix; a completion running on into a patient turn is cut there.
    pub patient_prefix: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_chars: DEFAULT_MAX_NEW_CHARS,
            greedy: true,
            doctor_cue: "医生：".into(),
            patient_prefix: "患者：".into(),
        }
    }
}

/// Strips a repeated doctor cue and anything from a leaked demonstration
/// delimiter or a new patient turn onwards.
pub fn clean_completion(raw: &str, config: &GenerationConfig) -> String {
    let mut text = raw.trim_start();
    while let Some(rest) = text.strip_prefix(config.doctor_cue.as_str()) {
        text = rest.trim_start();
    }
    if let Some(i) = text.find(DEMO_DELIMITER) {
        text = &text[..i];
    }
    if !config.patient_prefix.is_empty() {
        if let Some(i) = text.find(&format!("\n{}", config.patient_prefix)) {
            text = &text[..i];
        }
    }
    text.trim().chars().take(config.max_new_chars).collect()
}

pub fn complete(
    provider: &dyn CompletionProvider,
    strategy: PromptStrategy,
    request: &CompletionRequest,
    config: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<CandidateResponse, ProviderError> {
    if request.prompt_text.trim().is_empty() {
        return Err(ProviderError::InvalidRequest("empty prompt".into()));
    }
    let raw = retry.run(|| provider.complete(request))?;
    let text = clean_completion(&raw, config);
    if text.is_empty() {
        return Err(ProviderError::EmptyCompletion);
    }
    Ok(CandidateResponse {
        strategy,
        text,
        provider_name: provider.name().to_string(),
    })
}

/// Failure of one prompt slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotError {
    pub strategy: PromptStrategy,
    pub error: String,
}

/// Completes every prompt concurrently and returns results in prompt order.
pub fn complete_all(
    provider: &dyn CompletionProvider,
    prompts: &[Prompt],
    config: &GenerationConfig,
    retry: &RetryPolicy,
) -> Vec<Result<CandidateResponse, SlotError>> {
    prompts
        .par_iter()
        .map(|prompt| {
            let request = CompletionRequest {
                prompt_text: prompt.text.clone(),
                max_new_chars: config.max_new_chars,
                greedy: config.greedy,
            };
            complete(provider, prompt.strategy, &request, config, retry).map_err(|e| SlotError {
                strategy: prompt.strategy,
                error: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockCompletion;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted(&'static str);

    impl CompletionProvider for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<String, ProviderError> {
            Ok(self.0.to_string())
        }
    }

    /// Fails every prompt containing "FAIL".
    struct FailOnMarker {
        calls: AtomicUsize,
    }

    impl CompletionProvider for FailOnMarker {
        fn name(&self) -> &str {
            "marker"
        }
        fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if request.prompt_text.contains("FAIL") {
                Err(ProviderError::Unavailable("injected".into()))
            } else {
                Ok(format!("回复：{}", request.prompt_text))
            }
        }
    }

    fn prompts(texts: [&str; 4]) -> Vec<Prompt> {
        PromptStrategy::ALL
            .iter()
            .zip(texts)
            .map(|(&strategy, text)| Prompt {
                strategy,
                text: text.to_string(),
                exemplar_ids: vec![],
                degraded: false,
            })
            .collect()
    }

    #[test]
    fn cue_is_stripped() {
        let cfg = GenerationConfig::default();
        let c = complete(
            &Scripted("医生：多喝水。"),
            PromptStrategy::Vanilla,
            &CompletionRequest::new("p"),
            &cfg,
            &RetryPolicy::immediate(1),
        )
        .unwrap();
        assert_eq!(c.text, "多喝水。");
        assert_eq!(c.provider_name, "scripted");
    }

    #[test]
    fn leaked_delimiter_and_next_turn_are_cut() {
        let cfg = GenerationConfig::default();
        assert_eq!(clean_completion("  先做胃镜。\n###\n患者：好", &cfg), "先做胃镜。");
        assert_eq!(clean_completion("先做胃镜。\n患者：好的\n医生：嗯", &cfg), "先做胃镜。");
        assert_eq!(clean_completion("医生：医生：嗯", &cfg), "嗯");
        let short = GenerationConfig {
            max_new_chars: 2,
            ..cfg
        };
        assert_eq!(clean_completion("一二三", &short), "一二");
    }

    #[test]
    fn empty_prompt_and_empty_completion() {
        let cfg = GenerationConfig::default();
        let retry = RetryPolicy::immediate(1);
        assert!(matches!(
            complete(
                &Scripted("x"),
                PromptStrategy::Vanilla,
                &CompletionRequest::new(" "),
                &cfg,
                &retry
            ),
            Err(ProviderError::InvalidRequest(_))
        ));
        assert!(matches!(
            complete(
                &Scripted("医生：###"),
                PromptStrategy::Vanilla,
                &CompletionRequest::new("p"),
                &cfg,
                &retry
            ),
            Err(ProviderError::EmptyCompletion)
        ));
    }

    #[test]
    fn mock_is_idempotent() {
        let cfg = GenerationConfig::default();
        let retry = RetryPolicy::immediate(1);
        let req = CompletionRequest::new("患者：咳嗽一周\n医生：");
        let a = complete(&MockCompletion::default(), PromptStrategy::Vanilla, &req, &cfg, &retry).unwrap();
        let b = complete(&MockCompletion::default(), PromptStrategy::Vanilla, &req, &cfg, &retry).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complete_all_keeps_order_and_isolates_failures() {
        let provider = FailOnMarker {
            calls: AtomicUsize::new(0),
        };
        let ps = prompts(["a", "FAIL", "c", "d"]);
        let out = complete_all(&provider, &ps, &GenerationConfig::default(), &RetryPolicy::immediate(3));
        assert_eq!(out.len(), 4);
        for (slot, p) in out.iter().zip(&ps) {
            match slot {
                Ok(c) => assert_eq!(c.strategy, p.strategy),
                Err(e) => assert_eq!(e.strategy, p.strategy),
            }
        }
        assert!(out[1].is_err());
        assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 3);
        // 3 successes + 3 attempts on the failing slot
        assert_eq!(provider.calls.load(Ordering::SeqCst), 6);
    }
}
