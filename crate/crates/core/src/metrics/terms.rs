//! Medical-term glossary, longest-match extraction, and Top-n neighborhoods.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::MetricError;
use crate::vector::{nearest_where, Vector, VectorStore};

/// Deduplicated glossary terms found in one response.
pub type TermSet = BTreeSet<String>;

/// Glossary terms plus optional word vectors used for term similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGlossary {
    terms: BTreeSet<String>,
    vectors: BTreeMap<String, Vector>,
}

impl TermGlossary {
    /// Vectors for words outside `terms` are dropped; zero vectors count as missing.
    pub fn new(
        terms: impl IntoIterator<Item = String>,
        vectors: impl IntoIterator<Item = (String, Vector)>,
    ) -> Result<Self, MetricError> {
        let mut set = BTreeSet::new();
        for term in terms {
            let term = term.trim().to_string();
            if term.is_empty() {
                return Err(MetricError::InvalidGlossary("empty term".into()));
            }
            set.insert(term);
        }
        if set.is_empty() {
            return Err(MetricError::InvalidGlossary("no terms".into()));
        }
        let mut dim = None;
        let mut kept = BTreeMap::new();
        for (term, vector) in vectors {
            if !set.contains(&term) || vector.is_zero() {
                continue;
            }
            if *dim.get_or_insert(vector.dim()) != vector.dim() {
                return Err(MetricError::InvalidGlossary(format!(
                    "vector for {term:?} has dimension {} instead of {}",
                    vector.dim(),
                    dim.unwrap_or_default()
                )));
            }
            kept.insert(term, vector);
        }
        Ok(Self {
            terms: set,
            vectors: kept,
        })
    }

    /// Reads one term per line and, optionally, a term-vector JSONL file.
    pub fn load(terms_path: impl AsRef<Path>, vectors_path: Option<&Path>) -> Result<Self, MetricError> {
        let terms_path = terms_path.as_ref();
        let text = fs::read_to_string(terms_path).map_err(|source| MetricError::Io {
            path: terms_path.display().to_string(),
            source,
        })?;
        let terms = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string);
        let vectors = match vectors_path {
            Some(p) => VectorStore::load_jsonl(p)?
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            None => Vec::new(),
        };
        Self::new(terms, vectors)
    }

    pub fn terms(&self) -> &BTreeSet<String> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn vector(&self, term: &str) -> Option<&Vector> {
        self.vectors.get(term)
    }

    pub fn vectors(&self) -> &BTreeMap<String, Vector> {
        &self.vectors
    }
}

/// Left-to-right longest-match scanner over a glossary.
#[derive(Debug, Clone)]
pub struct TermExtractor {
    terms: HashSet<String>,
    max_chars: usize,
}

impl TermExtractor {
    pub fn new(glossary: &TermGlossary) -> Self {
        Self {
            terms: glossary.terms.iter().cloned().collect(),
            max_chars: glossary.terms.iter().map(|t| t.chars().count()).max().unwrap_or(0),
        }
    }

    pub fn extract(&self, text: &str) -> TermSet {
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let chars = bounds.len() - 1;
        let mut found = TermSet::new();
        let mut i = 0;
        while i < chars {
            let longest = (1..=self.max_chars.min(chars - i))
                .rev()
                .find(|&len| self.terms.contains(&text[bounds[i]..bounds[i + len]]));
            match longest {
                Some(len) => {
                    found.insert(text[bounds[i]..bounds[i + len]].to_string());
                    i += len;
                }
                None => i += 1,
            }
        }
        found
    }
}

pub fn extract_terms(text: &str, glossary: &TermGlossary) -> TermSet {
    TermExtractor::new(glossary).extract(text)
}

/// Adds each base term's `k` nearest vocabulary words (by cosine) with their
/// vectors. Words already present are not duplicated.
pub fn expand_glossary(base: &TermGlossary, vocabulary: &VectorStore, k: usize) -> Result<TermGlossary, MetricError> {
    if k == 0 {
        return Ok(base.clone());
    }
    let mut terms = base.terms.clone();
    let mut vectors = base.vectors.clone();
    for term in &base.terms {
        let vector = base
            .vectors
            .get(term)
            .ok_or_else(|| MetricError::MissingVectors(term.clone()))?;
        for (word, _) in nearest_where(vector, vocabulary, k, |w| w != term)? {
            let v = vocabulary.get(&word).expect("neighbor from store").clone();
            vectors.entry(word.clone()).or_insert(v);
            terms.insert(word);
        }
    }
    TermGlossary::new(terms, vectors)
}

type Neighbours = Arc<BTreeSet<String>>;

/// Top-n neighborhoods over a glossary, with per-(term, n) caching.
///
/// Similarity is cosine between word vectors. A term always heads its own
/// neighborhood; the rest follow by descending similarity with ties broken
/// lexicographically. Terms without vectors only match themselves.
#[derive(Debug)]
pub struct TermMatcher<'g> {
    glossary: &'g TermGlossary,
    units: BTreeMap<&'g str, Vec<f64>>,
    cache: Mutex<HashMap<(String, usize), Neighbours>>,
}

impl<'g> TermMatcher<'g> {
    pub fn new(glossary: &'g TermGlossary) -> Self {
        let units = glossary
            .vectors
            .iter()
            .map(|(t, v)| {
                let n = v.norm();
                (t.as_str(), v.as_slice().iter().map(|&x| x as f64 / n).collect())
            })
            .collect();
        Self {
            glossary,
            units,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn glossary(&self) -> &TermGlossary {
        self.glossary
    }

    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (u, v) = (self.units.get(a)?, self.units.get(b)?);
        Some(u.iter().zip(v).map(|(x, y)| x * y).sum())
    }

    pub fn top_n_set(&self, term: &str, n: usize) -> Result<Arc<BTreeSet<String>>, MetricError> {
        if n == 0 {
            return Err(MetricError::InvalidN);
        }
        if !self.glossary.contains(term) {
            return Err(MetricError::UnknownTerm(term.to_string()));
        }
        let key = (term.to_string(), n);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let mut set = BTreeSet::from([term.to_string()]);
        if let Some(unit) = self.units.get(term) {
            let mut others: Vec<(&str, f64)> = self
                .units
                .iter()
                .filter(|(t, _)| **t != term)
                .map(|(t, v)| (*t, unit.iter().zip(v).map(|(x, y)| x * y).sum()))
                .collect();
            // stable sort keeps lexicographic order among equal similarities
            others.sort_by(|a, b| b.1.total_cmp(&a.1));
            set.extend(others.iter().take(n - 1).map(|(t, _)| t.to_string()));
        }
        let set = Arc::new(set);
        self.cache.lock().expect("cache lock").insert(key, set.clone());
        Ok(set)
    }

    pub fn is_topn_match(&self, a: &str, b: &str, n: usize) -> Result<bool, MetricError> {
        let sa = self.top_n_set(a, n)?;
        let sb = self.top_n_set(b, n)?;
        Ok(!sa.is_disjoint(&sb))
    }
}

pub fn top_n_set(term: &str, glossary: &TermGlossary, n: usize) -> Result<BTreeSet<String>, MetricError> {
    TermMatcher::new(glossary).top_n_set(term, n).map(|s| (*s).clone())
}

pub fn is_topn_match(a: &str, b: &str, glossary: &TermGlossary, n: usize) -> Result<bool, MetricError> {
    TermMatcher::new(glossary).is_topn_match(a, b, n)
}
