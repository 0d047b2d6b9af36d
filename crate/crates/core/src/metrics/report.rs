use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::intent::distribution_of;
use super::terms::{TermExtractor, TermMatcher, TermSet};
use super::tnm::{tnm_counts, Prf};
use super::{rouge_l, Action, MetricError};
use crate::promptgen::PromptStrategy;
use crate::provider::{IntentClassifier, RetryPolicy};

/// Number of distinct responses after whitespace normalization.
pub fn diversity_count(responses: &[&str]) -> usize {
    responses
        .iter()
        .map(|r| r.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Inputs for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub history: String,
    pub pred: String,
    pub gold: String,
    /// All candidate responses generated for the sample (diversity).
    #[serde(default)]
    pub candidates: Vec<String>,
    /// Strategy that produced `pred`, when known.
    #[serde(default)]
    pub strategy: Option<PromptStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnmEntry {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub skipped: usize,
    pub rouge_l: f64,
    /// Keyed `T{n}M`.
    pub tnm_f1: BTreeMap<String, TnmEntry>,
    pub int: f64,
    /// Distinct-candidate count → fraction of samples.
    pub diversity_hist: BTreeMap<usize, f64>,
    /// Action shares of the predicted responses.
    pub action_dist: BTreeMap<Action, f64>,
    /// Action shares of the gold responses.
    pub gold_action_dist: BTreeMap<Action, f64>,
    /// Strategy → fraction of samples it won; empty when strategies are unknown.
    pub strategy_wins: BTreeMap<PromptStrategy, f64>,
}

pub fn compute_report(
    samples: &[EvalSample],
    skipped: usize,
    matcher: &TermMatcher<'_>,
    tnm_ns: &[usize],
    classifier: &dyn IntentClassifier,
    retry: &RetryPolicy,
) -> Result<MetricReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::NoSamples);
    }
    let n = samples.len() as f64;

    let mut rouge_sum = 0.0;
    for s in samples {
        rouge_sum += rouge_l(&s.pred, &s.gold)?;
    }

    let extractor = TermExtractor::new(matcher.glossary());
    let pred_sets: Vec<TermSet> = samples.iter().map(|s| extractor.extract(&s.pred)).collect();
    let gold_sets: Vec<TermSet> = samples.iter().map(|s| extractor.extract(&s.gold)).collect();
    let mut tnm = BTreeMap::new();
    for &k in tnm_ns {
        let counts = tnm_counts(&pred_sets, &gold_sets, matcher, k)?;
        let prf = Prf::from_counts(counts);
        tnm.insert(
            format!("T{k}M"),
            TnmEntry {
                n: k,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
            },
        );
    }

    let mut pred_actions = Vec::with_capacity(samples.len());
    let mut gold_actions = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    for s in samples {
        let pred = retry.run(|| classifier.classify(&s.history, &s.pred))?;
        let gold = retry.run(|| classifier.classify(&s.history, &s.gold))?;
        if pred == gold {
            hits += 1;
        }
        pred_actions.push(pred.action());
        gold_actions.push(gold.action());
    }

    let mut diversity: BTreeMap<usize, usize> = BTreeMap::new();
    for s in samples {
        let responses: Vec<&str> = if s.candidates.is_empty() {
            vec![s.pred.as_str()]
        } else {
            s.candidates.iter().map(String::as_str).collect()
        };
        *diversity.entry(diversity_count(&responses)).or_default() += 1;
    }

    let mut strategy_wins = BTreeMap::new();
    if samples.iter().all(|s| s.strategy.is_some()) {
        let mut wins: BTreeMap<PromptStrategy, usize> = PromptStrategy::ALL.iter().map(|&s| (s, 0)).collect();
        for s in samples {
            *wins.entry(s.strategy.expect("checked")).or_default() += 1;
        }
        strategy_wins = wins.into_iter().map(|(s, c)| (s, c as f64 / n)).collect();
    }

    Ok(MetricReport {
        samples: samples.len(),
        skipped,
        rouge_l: rouge_sum / n,
        tnm_f1: tnm,
        int: hits as f64 / n,
        diversity_hist: diversity.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        action_dist: distribution_of(pred_actions.into_iter())?,
        gold_action_dist: distribution_of(gold_actions.into_iter())?,
        strategy_wins,
    })
}
