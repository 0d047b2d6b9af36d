//! Micro-averaged F1 over term sets under Top-n Match.

use serde::{Deserialize, Serialize};

use super::terms::{TermMatcher, TermSet};
use super::MetricError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for TermCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Any 0/0 ratio is taken as 0.
    pub fn from_counts(c: TermCounts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// TP: predicted terms matching some gold term. FP: the other predicted
/// terms. FN: gold terms matched by no predicted term.
pub fn sample_counts(
    pred: &TermSet,
    gold: &TermSet,
    matcher: &TermMatcher<'_>,
    n: usize,
) -> Result<TermCounts, MetricError> {
    let mut tp = 0;
    for a in pred {
        if any_match(a, gold, matcher, n)? {
            tp += 1;
        }
    }
    let mut fn_ = 0;
    for b in gold {
        if !any_match(b, pred, matcher, n)? {
            fn_ += 1;
        }
    }
    Ok(TermCounts {
        tp,
        fp: pred.len() - tp,
        fn_,
    })
}

fn any_match(term: &str, others: &TermSet, matcher: &TermMatcher<'_>, n: usize) -> Result<bool, MetricError> {
    for other in others {
        if matcher.is_topn_match(term, other, n)? {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn tnm_counts(
    pred_sets: &[TermSet],
    gold_sets: &[TermSet],
    matcher: &TermMatcher<'_>,
    n: usize,
) -> Result<TermCounts, MetricError> {
    if pred_sets.len() != gold_sets.len() {
        return Err(MetricError::LengthMismatch {
            left: pred_sets.len(),
            right: gold_sets.len(),
        });
    }
    if pred_sets.is_empty() {
        return Err(MetricError::NoSamples);
    }
    let mut total = TermCounts::default();
    for (pred, gold) in pred_sets.iter().zip(gold_sets) {
        total += sample_counts(pred, gold, matcher, n)?;
    }
    Ok(total)
}

pub fn tnm_f1(
    pred_sets: &[TermSet],
    gold_sets: &[TermSet],
    matcher: &TermMatcher<'_>,
    n: usize,
) -> Result<Prf, MetricError> {
    tnm_counts(pred_sets, gold_sets, matcher, n).map(Prf::from_counts)
}
