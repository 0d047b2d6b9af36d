use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::provider::{IntentClassifier, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Request,
    Inform,
    Other,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Request, Action::Inform, Action::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Request => "Request",
            Action::Inform => "Inform",
            Action::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    Symptom,
    Etiology,
    BasicInformation,
    ExistingExaminationAndTreatment,
    DrugRecommendation,
    MedicalAdvice,
    Precautions,
    Diagnose,
    Other,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Symptom => "Symptom",
            Target::Etiology => "Etiology",
            Target::BasicInformation => "Basic Information",
            Target::ExistingExaminationAndTreatment => "Existing Examination and Treatment",
            Target::DrugRecommendation => "Drug Recommendation",
            Target::MedicalAdvice => "Medical Advice",
            Target::Precautions => "Precautions",
            Target::Diagnose => "Diagnose",
            Target::Other => "Other",
        }
    }
}

/// Doctor intent. Only the nine (action, target) pairs of the label set can
/// be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntentLabel {
    action: Action,
    target: Target,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 9] = [
        IntentLabel {
            action: Action::Request,
            target: Target::Symptom,
        },
        IntentLabel {
            action: Action::Request,
            target: Target::Etiology,
        },
        IntentLabel {
            action: Action::Request,
            target: Target::BasicInformation,
        },
        IntentLabel {
            action: Action::Request,
            target: Target::ExistingExaminationAndTreatment,
        },
        IntentLabel {
            action: Action::Inform,
            target: Target::DrugRecommendation,
        },
        IntentLabel {
            action: Action::Inform,
            target: Target::MedicalAdvice,
        },
        IntentLabel {
            action: Action::Inform,
            target: Target::Precautions,
        },
        IntentLabel {
            action: Action::Inform,
            target: Target::Diagnose,
        },
        IntentLabel {
            action: Action::Other,
            target: Target::Other,
        },
    ];

    pub fn new(action: Action, target: Target) -> Option<Self> {
        let label = IntentLabel { action, target };
        Self::ALL.contains(&label).then_some(label)
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn target(&self) -> Target {
        self.target
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.action.as_str(), self.target.as_str())
    }
}

impl FromStr for IntentLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|l| l.to_string() == s)
            .copied()
            .ok_or_else(|| format!("unknown intent label {s:?}"))
    }
}

impl Serialize for IntentLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IntentLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluated pair for intent-based metrics.
#[derive(Debug, Clone, Copy)]
pub struct IntentPair<'a> {
    pub pred: &'a str,
    pub gold: &'a str,
    pub history: &'a str,
}

/// Fraction of pairs whose prediction gets the same label as the gold response.
pub fn intent_accuracy(
    pairs: &[IntentPair<'_>],
    classifier: &dyn IntentClassifier,
    retry: &RetryPolicy,
) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoSamples);
    }
    let mut hits = 0usize;
    for pair in pairs {
        let pred = retry.run(|| classifier.classify(pair.history, pair.pred))?;
        let gold = retry.run(|| classifier.classify(pair.history, pair.gold))?;
        if pred == gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Share of each dialogue action among the classified texts.
pub fn action_distribution(
    texts: &[&str],
    histories: &[&str],
    classifier: &dyn IntentClassifier,
    retry: &RetryPolicy,
) -> Result<BTreeMap<Action, f64>, MetricError> {
    if texts.len() != histories.len() {
        return Err(MetricError::LengthMismatch {
            left: texts.len(),
            right: histories.len(),
        });
    }
    let labels = texts
        .iter()
        .zip(histories)
        .map(|(t, h)| retry.run(|| classifier.classify(h, t)))
        .collect::<Result<Vec<_>, _>>()?;
    distribution_of(labels.iter().map(IntentLabel::action))
}

pub(crate) fn distribution_of(actions: impl Iterator<Item = Action>) -> Result<BTreeMap<Action, f64>, MetricError> {
    let mut counts: BTreeMap<Action, usize> = Action::ALL.iter().map(|&a| (a, 0)).collect();
    let mut n = 0usize;
    for a in actions {
        *counts.entry(a).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::NoSamples);
    }
    Ok(counts.into_iter().map(|(a, c)| (a, c as f64 / n as f64)).collect())
}
