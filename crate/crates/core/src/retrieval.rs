//! Text relevance scoring: dense encoders, BM25, and the hybrid re-ranker.
//!
//! Every text-recall surface in the system (neighbor selection, wiki
//! co-occurrence ranking, memory retrieval, name resolution) funnels through
//! the same primitives: an [`Encoder`] turns text into a fixed-dimension
//! vector, a [`LexicalIndex`] scores exact-term overlap, and
//! [`hybrid_score`] blends the two as
//! `alpha * Norm(BM25(q, d)) + (1 - alpha) * cos(E(q), E(d))`
//! where `Norm` is min-max over the candidate pool.
//!
//! BM25 here is the Okapi form with the non-negative idf used by Lucene,
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, so scores never go negative and
//! the `Norm` bounds hold without clamping.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Fixed-length vector of finite reals produced by an [`Encoder`].
pub type DenseVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("unknown document id `{0}`")]
    UnknownDocument(String),
    #[error("no embedding stored for text (key {key})")]
    MissingEmbedding { key: String },
    #[error("{path}:{line}: {reason}")]
    MalformedTable {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding backend: {0}")]
    Backend(String),
}

/// Text-to-vector interface. Implementations must be deterministic per text
/// and always emit vectors of [`Encoder::dimension`] finite components.
pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;
    fn encode(&self, text: &str) -> Result<DenseVector, RetrievalError>;
}

/// Lowercase a string and split it on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deterministic offline encoder: a token-hash bag of words.
///
/// Each token is FNV-1a-hashed into one of `dimension` buckets and counted.
/// Text with no tokens at all maps to a fixed fallback (bucket 0 = 1) so the
/// output is never the zero vector and cosine stays total.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dimension: usize,
}

impl HashEncoder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "encoder dimension must be positive");
        HashEncoder { dimension }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Encoder for HashEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<DenseVector, RetrievalError> {
        let mut values = vec![0.0; self.dimension];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            values[0] = 1.0;
            return Ok(values);
        }
        for token in tokens {
            let bucket = (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize;
            values[bucket] += 1.0;
        }
        Ok(values)
    }
}

/// Encoder backed by a precomputed table of vectors.
///
/// The table file holds one record per line, `key<TAB>v1,v2,...`, where the
/// key is the lowercase SHA-256 hex of the exact text ([`TableEncoder::key`]
/// computes it). Texts absent from the table are an error, not a fallback:
/// a precomputed backing that silently degrades would poison comparisons.
#[derive(Debug, Clone)]
pub struct TableEncoder {
    dimension: usize,
    vectors: HashMap<String, DenseVector>,
}

impl TableEncoder {
    /// Hash key under which `text`'s vector is stored.
    pub fn key(text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load(path: &Path, dimension: usize) -> Result<Self, RetrievalError> {
        assert!(dimension > 0, "encoder dimension must be positive");
        let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: &str| RetrievalError::MalformedTable {
                path: path.display().to_string(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let (key, rest) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected key<TAB>values"))?;
            let values: DenseVector = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| malformed(&format!("bad component: {e}")))?;
            if values.len() != dimension {
                return Err(malformed(&format!(
                    "expected {dimension} components, found {}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(malformed("non-finite component"));
            }
            vectors.insert(key.to_string(), values);
        }
        Ok(TableEncoder { dimension, vectors })
    }

    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (String, DenseVector)>,
        dimension: usize,
    ) -> Self {
        TableEncoder {
            dimension,
            vectors: pairs.into_iter().collect(),
        }
    }
}

impl Encoder for TableEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<DenseVector, RetrievalError> {
        let key = TableEncoder::key(text);
        self.vectors
            .get(&key)
            .cloned()
            .ok_or(RetrievalError::MissingEmbedding { key })
    }
}

/// Cosine similarity in [-1, 1]. Zero vectors and mismatched dimensions are
/// errors rather than silent zeros.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Okapi BM25 state over a fixed document pool.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    /// (doc id, token sequence), in insertion order.
    documents: Vec<(String, Vec<String>)>,
    by_id: HashMap<String, usize>,
    document_frequencies: HashMap<String, usize>,
    average_length: f64,
    k1: f64,
    b: f64,
}

impl LexicalIndex {
    pub fn build(docs: impl IntoIterator<Item = (String, String)>, k1: f64, b: f64) -> Self {
        let documents: Vec<(String, Vec<String>)> = docs
            .into_iter()
            .map(|(id, text)| (id, tokenize(&text)))
            .collect();
        let mut by_id = HashMap::new();
        let mut document_frequencies: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for (i, (id, tokens)) in documents.iter().enumerate() {
            by_id.insert(id.clone(), i);
            total_len += tokens.len();
            let unique: HashSet<&String> = tokens.iter().collect();
            for token in unique {
                *document_frequencies.entry(token.clone()).or_insert(0) += 1;
            }
        }
        let average_length = if documents.is_empty() {
            0.0
        } else {
            total_len as f64 / documents.len() as f64
        };
        LexicalIndex {
            documents,
            by_id,
            document_frequencies,
            average_length,
            k1,
            b,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    fn idf(&self, token: &str) -> f64 {
        let n = self.documents.len() as f64;
        let df = self.document_frequencies.get(token).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Okapi BM25 score of `query` against the stored document `doc_id`.
    /// Always ≥ 0; exactly 0 when no query token occurs in the document.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64, RetrievalError> {
        let &i = self
            .by_id
            .get(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDocument(doc_id.to_string()))?;
        let tokens = &self.documents[i].1;
        let mut tf: HashMap<&String, f64> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        let dl = tokens.len() as f64;
        let norm = if self.average_length > 0.0 {
            self.k1 * (1.0 - self.b + self.b * dl / self.average_length)
        } else {
            self.k1
        };
        let mut score = 0.0;
        // Sorted unique tokens fix the summation order: floating-point
        // addition does not commute across orders at the last ulp, and two
        // calls with the same inputs must return the same bits.
        let query_tokens: BTreeSet<String> = tokenize(query).into_iter().collect();
        for token in &query_tokens {
            if let Some(&f) = tf.get(token) {
                score += self.idf(token) * (f * (self.k1 + 1.0)) / (f + norm);
            }
        }
        Ok(score)
    }
}

/// Weights of the hybrid scorer. `alpha` is the lexical share; the dense
/// cosine term gets `1 - alpha`. Absent fields deserialize to the defaults,
/// so a config file may set only the weight it cares about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub alpha: f64,
    pub k1: f64,
    pub b: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            alpha: 0.5,
            k1: 1.2,
            b: 0.75,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if self.k1 <= 0.0 {
            return Err(format!("k1 must be positive, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("b must lie in [0,1], got {}", self.b));
        }
        Ok(())
    }
}

/// Min-max normalize `raw` in place. All-equal inputs map to 0.5 apiece so
/// the lexical term turns neutral instead of dividing by zero.
fn min_max(raw: &mut [f64]) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in raw.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if raw.is_empty() {
        return;
    }
    if hi == lo {
        raw.iter_mut().for_each(|v| *v = 0.5);
    } else {
        raw.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
}

fn score_pool(
    query: &str,
    pool: &[(String, String)],
    cfg: &HybridConfig,
    enc: &dyn Encoder,
) -> Result<Vec<f64>, RetrievalError> {
    let index = LexicalIndex::build(pool.iter().cloned(), cfg.k1, cfg.b);
    let mut lexical: Vec<f64> = pool
        .iter()
        .map(|(id, _)| index.score(query, id))
        .collect::<Result<_, _>>()?;
    min_max(&mut lexical);
    let query_vec = enc.encode(query)?;
    let mut scores = Vec::with_capacity(pool.len());
    for ((_, text), lex) in pool.iter().zip(&lexical) {
        let dense = cosine(&query_vec, &enc.encode(text)?)?;
        scores.push(cfg.alpha * lex + (1.0 - cfg.alpha) * dense);
    }
    Ok(scores)
}

/// Hybrid relevance of one pool member against `query`. The whole pool is
/// needed because the lexical term is normalized over it.
pub fn hybrid_score(
    query: &str,
    candidate_id: &str,
    pool: &[(String, String)],
    cfg: &HybridConfig,
    enc: &dyn Encoder,
) -> Result<f64, RetrievalError> {
    let position = pool
        .iter()
        .position(|(id, _)| id == candidate_id)
        .ok_or_else(|| RetrievalError::UnknownDocument(candidate_id.to_string()))?;
    Ok(score_pool(query, pool, cfg, enc)?[position])
}

/// Rank the pool by hybrid score, descending, ties to the lexicographically
/// smallest id. Returns `min(k, |pool|)` entries; an empty pool is fine.
pub fn top_k(
    query: &str,
    pool: &[(String, String)],
    k: usize,
    cfg: &HybridConfig,
    enc: &dyn Encoder,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    assert!(k >= 1, "k must be at least 1");
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let scores = score_pool(query, pool, cfg, enc)?;
    let mut ranked: Vec<(String, f64)> = pool
        .iter()
        .map(|(id, _)| id.clone())
        .zip(scores)
        .collect();
    ranked.sort_by(|(id_a, s_a), (id_b, s_b)| {
        s_b.partial_cmp(s_a)
            .expect("hybrid scores are finite")
            .then_with(|| id_a.cmp(id_b))
    });
    ranked.truncate(k);
    Ok(ranked)
}
