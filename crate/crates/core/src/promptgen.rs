//! Exemplar compression and prompt assembly.
//!
//! Every strategy gets one prompt. The instruct prompt (`Vanilla`) carries the
//! instruction and the full target history; the in-context prompts prepend
//! compressed exemplar dialogues, each a chief-complaint abstract plus the most
//! recent turns that fit the window budget, separated by `###` lines.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_count, recent_window, DialogueTurn, TurnRenderer, DEMO_DELIMITER};
use crate::retrieval::RetrievalError;

pub const DEFAULT_INSTRUCT_TEMPLATE: &str = include_str!("../templates/instruct.txt");
pub const DEFAULT_IN_CONTEXT_TEMPLATE: &str = include_str!("../templates/in_context.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("example session {0:?} has no turns")]
    EmptySession(String),
    #[error("template is missing the {{{0}}} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("in-context prompt needs at least one example")]
    NoExamples,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    Vanilla,
    GlobalView,
    LocalPrimary,
    LocalSecondary,
}

impl PromptStrategy {
    /// Declaration order doubles as the tie-break order when ranking.
    pub const ALL: [PromptStrategy; 4] = [
        PromptStrategy::Vanilla,
        PromptStrategy::GlobalView,
        PromptStrategy::LocalPrimary,
        PromptStrategy::LocalSecondary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStrategy::Vanilla => "vanilla",
            PromptStrategy::GlobalView => "global_view",
            PromptStrategy::LocalPrimary => "local_primary",
            PromptStrategy::LocalSecondary => "local_secondary",
        }
    }

    pub fn is_in_context(self) -> bool {
        self != PromptStrategy::Vanilla
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Length budgets for one compressed exemplar, in measured characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionBudget {
    /// Abstract budget, including its line break.
    pub abstract_chars: usize,
    /// Recent-window budget, including role prefixes and line breaks.
    pub window_chars: usize,
    /// Cap on the whole rendered exemplar.
    pub example_cap: usize,
}

impl Default for CompressionBudget {
    fn default() -> Self {
        Self {
            abstract_chars: 20,
            window_chars: 120,
            example_cap: 140,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedExample {
    pub source_id: String,
    /// Chief-complaint prefix plus `\n`, or empty when nothing was cut.
    pub abstract_text: String,
    pub window_text: String,
}

impl CompressedExample {
    pub fn rendered(&self) -> String {
        format!("{}{}", self.abstract_text, self.window_text)
    }
}

/// Keeps the recent turns of `turns` that fit the window and, when earlier
/// turns were dropped, replaces them with a character prefix of `complaint`.
pub fn compress_example(
    source_id: &str,
    turns: &[DialogueTurn],
    complaint: &str,
    budget: &CompressionBudget,
    renderer: &TurnRenderer,
) -> Result<CompressedExample, PromptError> {
    if turns.is_empty() {
        return Err(PromptError::EmptySession(source_id.to_string()));
    }
    let window_budget = budget.window_chars.min(budget.example_cap);
    let mut window = recent_window(turns, window_budget, renderer);
    let mut abstract_text = String::new();
    let abstract_budget = budget.abstract_chars.min(budget.example_cap);
    if !window.excluded.is_empty() && abstract_budget >= 2 {
        let complaint = complaint.trim();
        if !complaint.is_empty() {
            let prefix: String = complaint.chars().take(abstract_budget - 1).collect();
            abstract_text = format!("{prefix}\n");
        }
    }
    let abstract_len = char_count(&abstract_text);
    if abstract_len + window_budget > budget.example_cap {
        window = recent_window(turns, budget.example_cap - abstract_len, renderer);
    }
    Ok(CompressedExample {
        source_id: source_id.to_string(),
        abstract_text,
        window_text: window.render(renderer),
    })
}

const PLACEHOLDERS: [&str; 3] = ["history", "examples", "cue"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    fn parse(text: &str, required: &[&'static str]) -> Result<Self, PromptError> {
        for name in required {
            if !text.contains(&format!("{{{name}}}")) {
                return Err(PromptError::MissingPlaceholder(name));
            }
        }
        Ok(Self {
            text: text.strip_suffix('\n').unwrap_or(text).to_string(),
        })
    }

    pub fn instruct(text: &str) -> Result<Self, PromptError> {
        Self::parse(text, &["history"])
    }

    pub fn in_context(text: &str) -> Result<Self, PromptError> {
        Self::parse(text, &["history", "examples"])
    }

    /// Single-pass substitution; substituted values are never rescanned.
    pub fn render(&self, history: &str, examples: &str, cue: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + history.len() + examples.len());
        let mut rest = self.text.as_str();
        loop {
            let next = PLACEHOLDERS
                .iter()
                .filter_map(|name| rest.find(&format!("{{{name}}}")).map(|i| (i, *name)))
                .min();
            match next {
                Some((i, name)) => {
                    out.push_str(&rest[..i]);
                    out.push_str(match name {
                        "history" => history,
                        "examples" => examples,
                        _ => cue,
                    });
                    rest = &rest[i + name.len() + 2..];
                }
                None => {
                    out.push_str(rest);
                    return out;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub instruct: PromptTemplate,
    pub in_context: PromptTemplate,
    pub cue: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            instruct: PromptTemplate::instruct(DEFAULT_INSTRUCT_TEMPLATE).expect("default template"),
            in_context: PromptTemplate::in_context(DEFAULT_IN_CONTEXT_TEMPLATE).expect("default template"),
            cue: "医生：".to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn load(instruct: Option<&Path>, in_context: Option<&Path>, cue: &str) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| PromptError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let defaults = Self::default();
        Ok(Self {
            instruct: match instruct {
                Some(p) => PromptTemplate::instruct(&read(p)?)?,
                None => defaults.instruct,
            },
            in_context: match in_context {
                Some(p) => PromptTemplate::in_context(&read(p)?)?,
                None => defaults.in_context,
            },
            cue: cue.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub strategy: PromptStrategy,
    pub text: String,
    pub exemplar_ids: Vec<String>,
    /// In-context slot that fell back to the instruct prompt for lack of exemplars.
    #[serde(default)]
    pub degraded: bool,
}

pub fn build_instruct_prompt(history: &[DialogueTurn], templates: &PromptTemplates, renderer: &TurnRenderer) -> Prompt {
    Prompt {
        strategy: PromptStrategy::Vanilla,
        text: templates.instruct.render(&renderer.render(history), "", &templates.cue),
        exemplar_ids: Vec::new(),
        degraded: false,
    }
}

/// Renders exemplars in the given (retrieval-rank) order, each followed by a
/// delimiter line, ahead of the uncompressed target history.
pub fn build_in_context_prompt(
    strategy: PromptStrategy,
    examples: &[CompressedExample],
    history: &[DialogueTurn],
    templates: &PromptTemplates,
    renderer: &TurnRenderer,
) -> Result<Prompt, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let demos: String = examples
        .iter()
        .map(|e| format!("{}{DEMO_DELIMITER}\n", e.rendered()))
        .collect();
    Ok(Prompt {
        strategy,
        text: templates
            .in_context
            .render(&renderer.render(history), &demos, &templates.cue),
        exemplar_ids: examples.iter().map(|e| e.source_id.clone()).collect(),
        degraded: false,
    })
}

/// Supplies compressed exemplars per in-context strategy for one target.
pub trait ExemplarSource {
    fn exemplars(&self, strategy: PromptStrategy) -> Result<Vec<CompressedExample>, PromptError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub prompts: Vec<Prompt>,
    pub warnings: Vec<String>,
}

/// One prompt per requested strategy, in declaration order. An in-context
/// strategy with nothing to retrieve gets the instruct prompt text instead.
pub fn generate_prompt_set(
    history: &[DialogueTurn],
    source: &dyn ExemplarSource,
    strategies: &[PromptStrategy],
    templates: &PromptTemplates,
    renderer: &TurnRenderer,
) -> Result<PromptSet, PromptError> {
    let vanilla = build_instruct_prompt(history, templates, renderer);
    let mut prompts = Vec::with_capacity(strategies.len());
    let mut warnings = Vec::new();
    for strategy in PromptStrategy::ALL.into_iter().filter(|s| strategies.contains(s)) {
        if !strategy.is_in_context() {
            prompts.push(vanilla.clone());
            continue;
        }
        let (examples, reason) = match source.exemplars(strategy) {
            Ok(examples) => (examples, "no exemplars retrieved".to_string()),
            Err(PromptError::Retrieval(e)) if e.is_empty_result() => (Vec::new(), e.to_string()),
            Err(e) => return Err(e),
        };
        if examples.is_empty() {
            let warning = format!("{strategy}: {reason}; using the instruct prompt");
            log::warn!("{warning}");
            warnings.push(warning);
            prompts.push(Prompt {
                strategy,
                text: vanilla.text.clone(),
                exemplar_ids: Vec::new(),
                degraded: true,
            });
        } else {
            prompts.push(build_in_context_prompt(
                strategy, &examples, history, templates, renderer,
            )?);
        }
    }
    Ok(PromptSet { prompts, warnings })
}
