//! Embeddings and an exact top-k cosine index with a small binary format.
//!
//! The local embedder hashes character trigrams of the lowercased,
//! whitespace-collapsed text (padded with one space at each end) into
//! [`LOCAL_DIMENSION`] signed buckets using FNV-1a 64 seeded with
//! [`LOCAL_HASH_SEED`] followed by the SplitMix64 finalizer. The bucket is
//! `h % D`, the sign is the top bit of `h`.
//!
//! Persisted layout (little-endian): magic `VIDX1`, `u32` dimension,
//! `u32` count, then per record `u32` id length, UTF-8 id bytes and
//! `dimension` × `f32`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};
use crate::providers::ProviderError;

pub const LOCAL_DIMENSION: usize = 256;
pub const LOCAL_HASH_SEED: u64 = 0x5ce9_f04e_a11c_e5ed;
pub const INDEX_MAGIC: &[u8; 5] = b"VIDX1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text has no trigram features (empty after normalization)")]
    DegenerateText,
    #[error("embedding contains non-finite or all-zero values")]
    InvalidVector,
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("provider returned {got} embeddings for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("index format error: {0}")]
    Format(String),
    #[error("index i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit L2 length. Fails on zero or non-finite input.
    pub fn from_raw(raw: &[f32]) -> Result<Self, EmbedError> {
        let wide: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        Self::from_f64(&wide)
    }

    fn from_f64(raw: &[f64]) -> Result<Self, EmbedError> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::InvalidVector);
        }
        Ok(Self {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    /// Wraps values already known to be unit-length (e.g. read back from an index file).
    fn from_stored(values: Vec<f32>) -> Self {
        Self { values }
    }

    /// Keeps `values` bit-for-bit when they are already unit length within
    /// 1e-5, otherwise normalizes.
    pub fn from_unit_or_raw(values: Vec<f32>) -> Result<Self, EmbedError> {
        let v = Self::from_stored(values);
        if v.values.iter().all(|x| x.is_finite()) && (v.norm() - 1.0).abs() <= 1e-5 {
            Ok(v)
        } else {
            Self::from_raw(&v.values)
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

/// Anything that can turn text into embeddings.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic trigram feature-hashing embedder.
#[derive(Debug, Clone, Copy)]
pub struct LocalEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self {
            dimension: LOCAL_DIMENSION,
            seed: LOCAL_HASH_SEED,
        }
    }
}

impl LocalEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn hash(&self, bytes: &[u8]) -> u64 {
        let mut h = FNV_OFFSET ^ self.seed;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        // SplitMix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^ (h >> 31)
    }

    /// Raw (unnormalized) trigram counts.
    pub fn features(&self, text: &str) -> Vec<f64> {
        let normalized = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let mut acc = vec![0.0f64; self.dimension];
        if normalized.is_empty() {
            return acc;
        }
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = self.hash(&buf[..len]);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        acc
    }
}

impl Embedder for LocalEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let feats = self.features(text);
        if feats.iter().all(|&v| v == 0.0) {
            return Err(EmbedError::DegenerateText);
        }
        EmbeddingVector::from_f64(&feats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    /// Insertion position of the record.
    pub position: usize,
}

/// Immutable exhaustive cosine index.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    records: Vec<IndexRecord>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.records == other.records
    }
}

impl VectorIndex {
    pub fn build(dimension: usize, records: Vec<IndexRecord>) -> Result<Self, IndexError> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.dimension() != dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: dimension,
                    found: r.vector.dimension(),
                });
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            dimension,
            records,
            by_id,
        })
    }

    /// Embeds `(id, text)` pairs and builds the index.
    pub fn from_texts<E: Embedder + ?Sized>(
        embedder: &E,
        items: &[(String, String)],
        exec: Exec,
    ) -> Result<Self, crate::Error> {
        let vectors = par::map(exec, items, |(_, text)| embedder.embed(text));
        let mut records = Vec::with_capacity(items.len());
        for ((id, _), v) in items.iter().zip(vectors) {
            records.push(IndexRecord {
                id: id.clone(),
                vector: v?,
            });
        }
        Ok(Self::build(embedder.dimension(), records)?)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&IndexRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_with(Exec::default(), query, k)
    }

    /// Top-k by cosine similarity, descending; ties go to the earlier record.
    pub fn search_with(
        &self,
        exec: Exec,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        if self.records.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let scores = par::map(exec, &self.records, |r| r.vector.dot(query));
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |a: &usize, b: &usize| -> Ordering {
            scores[*b]
                .partial_cmp(&scores[*a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| SearchHit {
                id: self.records[i].id.clone(),
                score: scores[i],
                position: i,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.records.len() * (8 + self.dimension * 4 + 64));
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for v in r.vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(INDEX_MAGIC.len())? != INDEX_MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let dimension = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        if dimension == 0 {
            return Err(IndexError::Format("zero dimension".into()));
        }
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| IndexError::Format("record id is not UTF-8".into()))?
                .to_string();
            let raw = cur.take(dimension * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::Format(format!("non-finite vector for `{id}`")));
            }
            records.push(IndexRecord {
                id,
                vector: EmbeddingVector::from_stored(values),
            });
        }
        if cur.pos != bytes.len() {
            return Err(IndexError::Format(format!(
                "{} trailing bytes (dimension/count inconsistent)",
                bytes.len() - cur.pos
            )));
        }
        Self::build(dimension, records).map_err(|e| match e {
            IndexError::DuplicateId(id) => IndexError::Format(format!("duplicate id `{id}`")),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::from_raw(v).unwrap()
    }

    fn toy() -> VectorIndex {
        VectorIndex::build(
            2,
            vec![
                IndexRecord { id: "a".into(), vector: unit(&[1.0, 0.0]) },
                IndexRecord { id: "b".into(), vector: unit(&[1.0, 1.0]) },
                IndexRecord { id: "c".into(), vector: unit(&[0.0, 1.0]) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn local_embedding_is_deterministic_and_unit() {
        let e = LocalEmbedder::default();
        assert_eq!(e.embed("apple").unwrap(), e.embed("apple").unwrap());
        let v = e.embed("healthy young Pink Lady apple in fall").unwrap();
        assert_eq!(v.dimension(), 256);
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert!(matches!(e.embed(""), Err(EmbedError::DegenerateText)));
        assert!(matches!(e.embed("   \n"), Err(EmbedError::DegenerateText)));
        assert_eq!(e.embed("Apple").unwrap(), e.embed("  apple ").unwrap());
    }

    #[test]
    fn similar_text_scores_higher() {
        let e = LocalEmbedder::default();
        let q = e.embed("pink lady apple").unwrap();
        let near = q.dot(&e.embed("pink lady apple tree").unwrap());
        let far = q.dot(&e.embed("winter carrot").unwrap());
        assert!(near > far, "{near} <= {far}");
        assert!(near > 0.8);
    }

    #[test]
    fn toy_ranking_matches_hand_computed_cosines() {
        // query (1, 0.2)/|.|: cos to a = 0.9806, to b = 0.8321, to c = 0.1961
        let idx = toy();
        let hits = idx.search(&unit(&[1.0, 0.2]), 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!((hits[0].score - 1.0 / 1.04f64.sqrt()).abs() < 1e-6);
        assert!((hits[1].score - 1.2 / (1.04f64.sqrt() * 2f64.sqrt())).abs() < 1e-6);
        assert!((hits[2].score - 0.2 / 1.04f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn search_edge_cases() {
        let idx = toy();
        let hits = idx.search(&unit(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(hits[0].id, "c");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert_eq!(idx.search(&unit(&[0.3, 1.0]), 10).unwrap().len(), 3);
        assert!(matches!(idx.search(&unit(&[1.0, 0.0, 0.0]), 1), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(idx.search(&unit(&[1.0, 0.0]), 0), Err(IndexError::InvalidK)));
        let empty = VectorIndex::build(2, vec![]).unwrap();
        assert!(matches!(empty.search(&unit(&[1.0, 0.0]), 1), Err(IndexError::EmptyIndex)));
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let idx = VectorIndex::build(
            2,
            vec![
                IndexRecord { id: "z".into(), vector: unit(&[1.0, 0.0]) },
                IndexRecord { id: "y".into(), vector: unit(&[0.0, 1.0]) },
                IndexRecord { id: "x".into(), vector: unit(&[1.0, 0.0]) },
            ],
        )
        .unwrap();
        let hits = idx.search(&unit(&[1.0, 0.0]), 2).unwrap();
        assert_eq!((hits[0].id.as_str(), hits[1].id.as_str()), ("z", "x"));
    }

    #[test]
    fn build_rejects_duplicates_and_mixed_dims() {
        let r = |id: &str, v: &[f32]| IndexRecord { id: id.into(), vector: unit(v) };
        assert!(matches!(
            VectorIndex::build(2, vec![r("a", &[1.0, 0.0]), r("a", &[0.0, 1.0])]),
            Err(IndexError::DuplicateId(_))
        ));
        assert!(matches!(
            VectorIndex::build(2, vec![r("a", &[1.0, 0.0, 0.0])]),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn persistence_round_trip_and_corruption() {
        let idx = toy();
        let bytes = idx.to_bytes();
        assert_eq!(VectorIndex::from_bytes(&bytes).unwrap(), idx);
        assert_eq!(bytes, VectorIndex::from_bytes(&bytes).unwrap().to_bytes());

        let empty = VectorIndex::build(7, vec![]).unwrap();
        let back = VectorIndex::from_bytes(&empty.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dimension(), 7);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VectorIndex::from_bytes(&bad), Err(IndexError::Format(_))));
        assert!(matches!(VectorIndex::from_bytes(&bytes[..bytes.len() - 3]), Err(IndexError::Format(_))));
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(VectorIndex::from_bytes(&longer), Err(IndexError::Format(_))));
        // claim dimension 3 for 2-d data
        let mut wrong_dim = bytes;
        wrong_dim[5] = 3;
        assert!(matches!(VectorIndex::from_bytes(&wrong_dim), Err(IndexError::Format(_))));
    }

    fn naive_topk(records: &[Vec<f32>], q: &[f32], k: usize) -> Vec<usize> {
        let qn = unit(q);
        let mut scored: Vec<(f64, usize)> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (unit(r).dot(&qn), i))
            .collect();
        // stable sort keeps insertion order among equal scores
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        scored.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-4i8..=4, dim)
            .prop_filter("nonzero", |v| v.iter().any(|&x| x != 0))
            .prop_map(|v| v.into_iter().map(f32::from).collect())
    }

    proptest! {
        #[test]
        fn search_equals_full_scan_oracle(
            (records, q, k) in (1usize..6).prop_flat_map(|d| (
                prop::collection::vec(nonzero_vec(d), 1..40),
                nonzero_vec(d),
                1usize..50,
            ))
        ) {
            let idx = VectorIndex::build(
                q.len(),
                records.iter().enumerate().map(|(i, v)| IndexRecord { id: i.to_string(), vector: unit(v) }).collect(),
            ).unwrap();
            let qv = unit(&q);
            let expected = naive_topk(&records, &q, k);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let got: Vec<usize> = idx.search_with(exec, &qv, k).unwrap().iter().map(|h| h.position).collect();
                prop_assert_eq!(&got, &expected);
            }
        }

        #[test]
        fn ranking_is_scale_invariant(
            (records, q) in (2usize..6).prop_flat_map(|d| (
                prop::collection::vec(nonzero_vec(d), 1..30),
                nonzero_vec(d),
            )),
            scale in 0.01f32..100.0,
        ) {
            let idx = VectorIndex::build(
                q.len(),
                records.iter().enumerate().map(|(i, v)| IndexRecord { id: i.to_string(), vector: unit(v) }).collect(),
            ).unwrap();
            let scaled: Vec<f32> = q.iter().map(|v| v * scale).collect();
            let a = idx.search(&unit(&q), records.len()).unwrap();
            let b = idx.search(&unit(&scaled), records.len()).unwrap();
            // identical ordering up to float-rounding ties
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.id == y.id || (x.score - y.score).abs() < 1e-6);
            }
        }

        #[test]
        fn persisted_bytes_round_trip(ids in prop::collection::hash_set("[a-z][a-z/_.]{0,11}", 0..20)) {
            let e = LocalEmbedder::new(16, 7);
            // short ids can hash to cancelling buckets in 16 dims; those are skipped
            let records: Vec<IndexRecord> = ids
                .iter()
                .filter_map(|id| e.embed(id).ok().map(|vector| IndexRecord { id: id.clone(), vector }))
                .collect();
            let idx = VectorIndex::build(16, records).unwrap();
            let bytes = idx.to_bytes();
            let back = VectorIndex::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &idx);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
