//! In-memory labeled vector store.
//!
//! Supplies the safe/unsafe similarity signals the defender folds into its
//! belief updates. Embeddings are deterministic feature hashes: character
//! 3-gram counts signed-hashed into a fixed number of buckets, then
//! L2-normalized. Queries are exact brute-force scans — desk-scale stores
//! make that sufficient and exactly testable.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::workload::Label;
use crate::Result;

/// Minimum embedding dimension.
pub const MIN_DIMENSION: usize = 8;

/// Tolerance on the unit-norm invariant of stored vectors.
pub const NORM_TOL: f64 = 1e-6;

/// One stored vector with its safety label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorEntry {
    pub vector: Vec<f64>,
    pub label: Label,
}

/// Mean top-k cosine similarity of a query against each label class,
/// clamped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityPair {
    pub p_safe: f64,
    pub p_unsafe: f64,
}

impl SimilarityPair {
    /// Neutral signal used when no vector store is consulted.
    pub const NEUTRAL: SimilarityPair = SimilarityPair { p_safe: 0.5, p_unsafe: 0.5 };
}

/// FNV-1a 64-bit. Hand-rolled so bucket assignment never depends on the
/// standard library's unspecified hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Bucket index and sign for one n-gram.
pub(crate) fn gram_bucket(gram: &str, dimension: usize) -> (usize, f64) {
    let h = fnv1a(gram.as_bytes());
    let bucket = (h % dimension as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Character 3-grams of `text`; texts shorter than 3 chars yield the whole
/// text as a single gram.
pub(crate) fn grams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return vec![chars.iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Deterministic feature-hash embedding: 3-gram counts with sign hashing,
/// L2-normalized. Identical text always embeds to the identical vector.
pub fn embed(text: &str, dimension: usize) -> Result<Vec<f64>> {
    if dimension < MIN_DIMENSION {
        return Err(Error::InvalidInput(format!(
            "embedding dimension must be at least {MIN_DIMENSION}, got {dimension}"
        )));
    }
    let grams = grams(text);
    if grams.is_empty() {
        return Err(Error::ZeroFeatures);
    }
    let mut v = vec![0.0f64; dimension];
    for gram in &grams {
        let (bucket, sign) = gram_bucket(gram, dimension);
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Possible only through exact sign cancellation across grams.
        return Err(Error::ZeroFeatures);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Labeled vector store over a fixed dimension.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dimension: usize,
    entries: Vec<VectorEntry>,
}

impl VectorStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension < MIN_DIMENSION {
            return Err(Error::InvalidInput(format!(
                "store dimension must be at least {MIN_DIMENSION}, got {dimension}"
            )));
        }
        Ok(Self { dimension, entries: Vec::new() })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert one entry, enforcing dimension and unit-norm invariants.
    pub fn insert(&mut self, entry: VectorEntry) -> Result<()> {
        if entry.vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: entry.vector.len(),
            });
        }
        let norm = entry.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "stored vectors must be unit-normalized, norm was {norm}"
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Embed and insert a labeled text.
    pub fn insert_text(&mut self, text: &str, label: Label) -> Result<()> {
        let vector = embed(text, self.dimension)?;
        self.insert(VectorEntry { vector, label })
    }

    /// Mean of the top-k cosine similarities per class. Negative cosines
    /// clamp to 0 before averaging; a class with no entries contributes 0.
    /// Errors if the store is empty.
    pub fn similarity_scores(&self, query: &[f64], k: usize) -> Result<SimilarityPair> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyStore);
        }
        if k == 0 {
            return Err(Error::InvalidInput("similarity k must be at least 1".into()));
        }
        let p_safe = self.class_score(query, Label::Benign, k);
        let p_unsafe = self.class_score(query, Label::Malicious, k);
        Ok(SimilarityPair { p_safe, p_unsafe })
    }

    fn class_score(&self, query: &[f64], label: Label, k: usize) -> f64 {
        // Entries and queries are unit vectors, so the dot product is the
        // cosine similarity.
        let mut cosines: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| {
                let dot: f64 = e.vector.iter().zip(query).map(|(a, b)| a * b).sum();
                dot.clamp(0.0, 1.0)
            })
            .collect();
        if cosines.is_empty() {
            return 0.0;
        }
        cosines.sort_by(|a, b| b.partial_cmp(a).expect("cosines are finite"));
        let top = &cosines[..k.min(cosines.len())];
        top.iter().sum::<f64>() / top.len() as f64
    }

    /// Write the store as JSON-lines `{"vector":[...], "label":0|1}`.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|source| Error::DatasetIo {
            path: display.clone(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(file);
        for entry in &self.entries {
            let line = serde_json::to_string(entry)
                .map_err(|e| Error::InvalidInput(format!("snapshot serialization: {e}")))?;
            writeln!(w, "{line}").map_err(|source| Error::DatasetIo {
                path: display.clone(),
                source,
            })?;
        }
        Ok(())
    }

    /// Load a snapshot written by [`save_snapshot`](Self::save_snapshot).
    pub fn load_snapshot(path: &Path, dimension: usize) -> Result<Self> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| Error::DatasetIo {
            path: display.clone(),
            source,
        })?;
        let mut store = Self::new(dimension)?;
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| Error::DatasetIo {
                path: display.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: VectorEntry =
                serde_json::from_str(&line).map_err(|e| Error::DatasetRecord {
                    path: display.clone(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            store.insert(entry)?;
        }
        Ok(store)
    }
}
