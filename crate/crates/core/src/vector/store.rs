use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cosine, Vector, VectorError};

/// Keyed vectors of one shared dimension. Keys iterate in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    dim: usize,
    entries: BTreeMap<String, Vector>,
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    key: String,
    vector: Vector,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces `key`. Zero vectors are rejected since every
    /// consumer compares by cosine.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vector) -> Result<(), VectorError> {
        if vector.dim() != self.dim {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if vector.is_zero() {
            return Err(VectorError::ZeroVector);
        }
        self.entries.insert(key.into(), vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Vector> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Copy restricted to keys accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> VectorStore {
        VectorStore {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, VectorError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| VectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_jsonl(reader: impl BufRead, origin: &str) -> Result<Self, VectorError> {
        let mut store: Option<VectorStore> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| VectorError::Io {
                path: origin.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: VectorRecord = serde_json::from_str(&line).map_err(|e| VectorError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
            let store = store.get_or_insert_with(|| VectorStore::new(record.vector.dim()));
            if store.contains(&record.key) {
                return Err(VectorError::DuplicateKey {
                    key: record.key,
                    line: line_no,
                });
            }
            store
                .insert(record.key, record.vector)
                .map_err(|e| VectorError::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
        }
        store.ok_or(VectorError::EmptyStore)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for (key, vector) in &self.entries {
            let record = VectorRecord {
                key: key.clone(),
                vector: vector.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Top-k keys by descending cosine; ties go to the smaller key.
pub fn nearest(query: &Vector, store: &VectorStore, top_k: usize) -> Result<Vec<(String, f64)>, VectorError> {
    nearest_where(query, store, top_k, |_| true)
}

/// [`nearest`] over the keys accepted by `keep`.
pub fn nearest_where(
    query: &Vector,
    store: &VectorStore,
    top_k: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<Vec<(String, f64)>, VectorError> {
    if top_k == 0 {
        return Err(VectorError::InvalidTopK);
    }
    if store.is_empty() {
        return Err(VectorError::EmptyStore);
    }
    if query.dim() != store.dim() {
        return Err(VectorError::DimensionMismatch {
            expected: store.dim(),
            found: query.dim(),
        });
    }
    let mut scored = Vec::with_capacity(store.len());
    for (key, vector) in store.iter().filter(|(k, _)| keep(k)) {
        scored.push((key.to_string(), cosine(query, vector)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(scored)
}

/// Deterministic stand-in for a sentence encoder.
///
/// Each character unigram and bigram contributes a pseudo-random direction
/// derived from `(seed, gram)`, so texts sharing characters land near each
/// other. The sum is L2-normalized.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Vector {
    assert!(dim > 0, "mock_embed needs dim > 0");
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut grams: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    grams.extend(chars.windows(2).map(|w| w.iter().collect::<String>()));
    if grams.is_empty() {
        grams.push(String::new());
    }
    let mut acc = vec![0f64; dim];
    for gram in &grams {
        let mut rng = gram_rng(seed, gram);
        for slot in acc.iter_mut() {
            *slot += rng.random_range(-1.0..1.0);
        }
    }
    let mut norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        acc[0] = 1.0;
        norm = 1.0;
    }
    Vector::new(acc.iter().map(|v| (v / norm) as f32).collect()).expect("finite by construction")
}

fn gram_rng(seed: u64, gram: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(gram.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn mock_embed_contract() {
        let a1 = mock_embed("a", 8, 0);
        let a2 = mock_embed("a", 8, 0);
        assert_eq!(a1, a2);
        assert_ne!(a1, mock_embed("b", 8, 0));
        assert_ne!(a1, mock_embed("a", 8, 1));
        for text in ["a", "", "胃痛三天", "  spaced text "] {
            assert!((mock_embed(text, 16, 3).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mock_embed_prefers_shared_characters() {
        let q = mock_embed("胃痛三天了", 64, 0);
        let near = mock_embed("胃痛两天", 64, 0);
        let far = mock_embed("咳嗽发烧", 64, 0);
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }

    #[test]
    fn nearest_examples() {
        let mut store = VectorStore::new(2);
        store.insert("a", v(&[1.0, 0.0])).unwrap();
        store.insert("b", v(&[0.0, 1.0])).unwrap();
        let hits = nearest(&v(&[1.0, 0.1]), &store, 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        let self_hit = nearest(&v(&[0.0, 1.0]), &store, 1).unwrap();
        assert_eq!(self_hit[0].0, "b");
        assert!((self_hit[0].1 - 1.0).abs() < 1e-12);

        store.insert("c", v(&[1.0, 1.0])).unwrap();
        assert_eq!(nearest(&v(&[1.0, 0.0]), &store, 10).unwrap().len(), 3);
    }

    #[test]
    fn nearest_errors() {
        let mut store = VectorStore::new(2);
        assert!(matches!(
            nearest(&v(&[1.0, 0.0]), &store, 1),
            Err(VectorError::EmptyStore)
        ));
        store.insert("a", v(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            nearest(&v(&[1.0, 0.0]), &store, 0),
            Err(VectorError::InvalidTopK)
        ));
        assert!(matches!(
            nearest(&v(&[1.0]), &store, 1),
            Err(VectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn store_rejects_bad_inserts() {
        let mut store = VectorStore::new(2);
        assert!(matches!(
            store.insert("z", v(&[0.0, 0.0])),
            Err(VectorError::ZeroVector)
        ));
        assert!(matches!(
            store.insert("d", v(&[1.0])),
            Err(VectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let text = "{\"key\":\"b\",\"vector\":[0.0,1.0]}\n{\"key\":\"a\",\"vector\":[1.0,0.5]}\n";
        let store = VectorStore::from_jsonl(text.as_bytes(), "mem").unwrap();
        assert_eq!(store.dim(), 2);
        let mut out = Vec::new();
        store.write_jsonl(&mut out).unwrap();
        let again = VectorStore::from_jsonl(out.as_slice(), "mem").unwrap();
        assert_eq!(store, again);

        let dup = "{\"key\":\"a\",\"vector\":[1.0]}\n{\"key\":\"a\",\"vector\":[2.0]}\n";
        assert!(matches!(
            VectorStore::from_jsonl(dup.as_bytes(), "mem"),
            Err(VectorError::DuplicateKey { line: 2, .. })
        ));
        let ragged = "{\"key\":\"a\",\"vector\":[1.0]}\n{\"key\":\"b\",\"vector\":[2.0,1.0]}\n";
        assert!(matches!(
            VectorStore::from_jsonl(ragged.as_bytes(), "mem"),
            Err(VectorError::MalformedLine { line: 2, .. })
        ));
    }
}
