//! Brute-force oracles shared by the property and acceptance tests. None of
//! them call the library code they check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use medrag_core::corpus::DialogueTurn;

/// Neumaier-compensated `-(mean of logprobs)`.
pub fn score_oracle(logprobs: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in logprobs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    -((sum + c) / logprobs.len() as f64)
}

/// Full-table LCS length.
pub fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

/// ROUGE-L F1 from precision and recall over given units.
pub fn rouge_oracle<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    let lcs = lcs_oracle(pred, gold) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / pred.len() as f64;
    let r = lcs / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// A glossary as plain data: every term, and raw vectors for some of them.
#[derive(Debug, Clone)]
pub struct PlainGlossary {
    pub terms: Vec<String>,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl PlainGlossary {
    fn unit(&self, term: &str) -> Option<Vec<f64>> {
        let v = self.vectors.get(term)?;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
    }

    /// The term plus its n-1 most similar vector-bearing terms, ties to the
    /// smaller term; just the term when it has no usable vector.
    pub fn neighbours(&self, term: &str, n: usize) -> BTreeSet<String> {
        let mut out = BTreeSet::from([term.to_string()]);
        let Some(u) = self.unit(term) else { return out };
        let mut others: Vec<(f64, &String)> = self
            .terms
            .iter()
            .filter(|t| t.as_str() != term)
            .filter_map(|t| self.unit(t).map(|v| (u.iter().zip(&v).map(|(a, b)| a * b).sum(), t)))
            .collect();
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        out.extend(others.into_iter().take(n - 1).map(|(_, t)| t.clone()));
        out
    }

    pub fn matches(&self, a: &str, b: &str, n: usize) -> bool {
        !self.neighbours(a, n).is_disjoint(&self.neighbours(b, n))
    }

    /// Summed (tp, fp, fn) over sample pairs.
    pub fn counts(&self, pairs: &[(BTreeSet<String>, BTreeSet<String>)], n: usize) -> (usize, usize, usize) {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (pred, gold) in pairs {
            for a in pred {
                if gold.iter().any(|b| self.matches(a, b, n)) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            fn_ += gold
                .iter()
                .filter(|b| !pred.iter().any(|a| self.matches(a, b, n)))
                .count();
        }
        (tp, fp, fn_)
    }
}

pub fn f1_oracle(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Minimum-SSE split of `points` into two non-empty groups, by enumerating
/// every assignment with point 0 in group 0. Returns (sse, group of each point).
pub fn best_two_partition(points: &[[f64; 2]]) -> (f64, Vec<usize>) {
    let n = points.len();
    assert!((2..=24).contains(&n));
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0u32..(1 << (n - 1)) {
        let mask = mask << 1;
        if mask == 0 {
            continue;
        }
        let mut sum = [[0.0f64; 2]; 2];
        let mut sq = [0.0f64; 2];
        let mut count = [0usize; 2];
        for (i, p) in points.iter().enumerate() {
            let g = ((mask >> i) & 1) as usize;
            sum[g][0] += p[0];
            sum[g][1] += p[1];
            sq[g] += p[0] * p[0] + p[1] * p[1];
            count[g] += 1;
        }
        let sse: f64 = (0..2)
            .map(|g| sq[g] - (sum[g][0] * sum[g][0] + sum[g][1] * sum[g][1]) / count[g] as f64)
            .sum();
        if sse < best.0 {
            best = (sse, mask);
        }
    }
    (best.0, (0..n).map(|i| ((best.1 >> i) & 1) as usize).collect())
}

/// Rendered length of turns under the default prefixes, in characters.
pub fn rendered_chars(turns: &[DialogueTurn]) -> usize {
    turns.iter().map(|t| 3 + t.text.chars().count() + 1).sum()
}
