//! Answer-span embeddings: the vector type, cosine similarity, sum-traces and
//! the two providers (a file-backed store of precomputed vectors and a
//! deterministic hash-seeded synthetic embedder).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 384;

/// Added to the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

/// Tolerance on the norm of vectors flagged unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Tolerance the store loader applies to vectors read from disk.
pub const STORE_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no embedding stored under key `{0}`")]
    UnknownKey(String),
    #[error("cannot embed an empty input")]
    EmptyInput,
    #[error("embedding has non-finite component at index {0}")]
    NonFinite(usize),
    #[error("vector `{key}` has norm {norm}, expected 1 within {tolerance}")]
    NotUnitNorm { key: String, norm: f64, tolerance: f64 },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("malformed embedding store: {0}")]
    MalformedStore(String),
    #[error("cannot read embedding store `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A fixed-length real vector. Cloning is cheap (shared storage).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Arc<[f64]>,
    unit_norm: bool,
}

impl Embedding {
    /// Wraps raw values. `unit_norm` is set when the norm is already 1.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let unit_norm = (l2_norm(&values) - 1.0).abs() <= UNIT_NORM_TOL;
        Ok(Embedding {
            values: values.into(),
            unit_norm,
        })
    }

    /// Scales `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::MalformedStore(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        let mut e = Self::new(values)?;
        e.unit_norm = true;
        Ok(e)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<a,b> / (|a||b| + eps)`; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt() + COSINE_EPS)
}

/// Sum-trace update: returns `trace + increment`.
pub fn trace_update(trace: &[f64], increment: &Embedding) -> Result<Vec<f64>, EmbeddingError> {
    let mut next = trace.to_vec();
    add_into(&mut next, increment)?;
    Ok(next)
}

pub(crate) fn add_into(trace: &mut [f64], increment: &Embedding) -> Result<(), EmbeddingError> {
    if trace.len() != increment.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: trace.len(),
            got: increment.dimension(),
        });
    }
    for (t, v) in trace.iter_mut().zip(increment.values()) {
        *t += v;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StoreDocument {
    dimension: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

/// Precomputed unit-norm vectors keyed by response id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    vectors: BTreeMap<String, Embedding>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Result<Self, EmbeddingError> {
        if dimension == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(EmbeddingStore {
            dimension,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, key: impl Into<String>, e: Embedding) -> Result<(), EmbeddingError> {
        if e.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                got: e.dimension(),
            });
        }
        self.vectors.insert(key.into(), e);
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, EmbeddingError> {
        let doc: StoreDocument =
            serde_json::from_str(text).map_err(|e| EmbeddingError::MalformedStore(e.to_string()))?;
        let mut store = EmbeddingStore::new(doc.dimension)?;
        for (key, values) in doc.vectors {
            if values.len() != doc.dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: doc.dimension,
                    got: values.len(),
                });
            }
            let norm = l2_norm(&values);
            if !norm.is_finite() || (norm - 1.0).abs() > STORE_NORM_TOL {
                return Err(EmbeddingError::NotUnitNorm {
                    key,
                    norm,
                    tolerance: STORE_NORM_TOL,
                });
            }
            let e = Embedding::new(values)?;
            store.vectors.insert(key, e);
        }
        Ok(store)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let doc = StoreDocument {
            dimension: self.dimension,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.values().to_vec()))
                .collect(),
        };
        serde_json::to_string(&doc).expect("store serializes")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.vectors.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Result<&Embedding, EmbeddingError> {
        self.vectors
            .get(key)
            .ok_or_else(|| EmbeddingError::UnknownKey(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

/// Hash-seeded pseudo-random unit vectors: identical text gives an identical
/// vector, anything else lands at an essentially random direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticEmbedder {
    dimension: usize,
    seed: u64,
}

impl SyntheticEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dimension == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(SyntheticEmbedder { dimension, seed })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let values: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Embedding::normalized(values)
    }
}

impl Default for SyntheticEmbedder {
    fn default() -> Self {
        SyntheticEmbedder {
            dimension: DEFAULT_DIMENSION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    FileBacked,
    Synthetic,
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    FileBacked(Arc<EmbeddingStore>),
    Synthetic(SyntheticEmbedder),
}

impl EmbeddingProvider {
    pub fn synthetic() -> Self {
        EmbeddingProvider::Synthetic(SyntheticEmbedder::default())
    }

    pub fn kind(&self) -> ProviderKind {
        match self {
            EmbeddingProvider::FileBacked(_) => ProviderKind::FileBacked,
            EmbeddingProvider::Synthetic(_) => ProviderKind::Synthetic,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::FileBacked(s) => s.dimension(),
            EmbeddingProvider::Synthetic(s) => s.dimension(),
        }
    }

    /// File-backed providers look `text_or_key` up as a key; the synthetic
    /// provider embeds it as text.
    pub fn embed(&self, text_or_key: &str) -> Result<Embedding, EmbeddingError> {
        if text_or_key.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        match self {
            EmbeddingProvider::FileBacked(store) => store.get(text_or_key).cloned(),
            EmbeddingProvider::Synthetic(s) => s.embed(text_or_key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, i: usize, sign: f64) -> Embedding {
        let mut v = vec![0.0; d];
        v[i] = sign;
        Embedding::new(v).unwrap()
    }

    #[test]
    fn synthetic_is_deterministic_and_unit() {
        let p = EmbeddingProvider::synthetic();
        let a = p.embed("the eastern trailhead").unwrap();
        let b = p.embed("the eastern trailhead").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), DEFAULT_DIMENSION);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(a.is_unit_norm());
        assert!(matches!(p.embed(""), Err(EmbeddingError::EmptyInput)));
    }

    #[test]
    fn cosine_reference_cases() {
        let p = EmbeddingProvider::synthetic();
        let a = p.embed("x").unwrap();
        let self_sim = cosine(a.values(), a.values()).unwrap();
        assert!((self_sim - 1.0).abs() < 1e-6 && self_sim < 1.0);
        let e1 = basis(4, 0, 1.0);
        let e2 = basis(4, 1, 1.0);
        assert_eq!(cosine(e1.values(), e2.values()).unwrap(), 0.0);
        let neg = basis(4, 0, -1.0);
        assert!((cosine(e1.values(), neg.values()).unwrap() + 1.0).abs() < 1e-6);
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trace_update_sums() {
        let v = basis(3, 2, 1.0);
        let t = trace_update(&[0.0; 3], &v).unwrap();
        assert_eq!(t, v.values());
        let t = trace_update(&t, &v).unwrap();
        assert_eq!(t, vec![0.0, 0.0, 2.0]);
        let t = trace_update(&t, &v).unwrap();
        assert!((l2_norm(&t) - 3.0).abs() < 1e-12);
        assert!(trace_update(&[0.0; 2], &v).is_err());
    }

    #[test]
    fn store_roundtrip_and_validation() {
        let p = SyntheticEmbedder::new(8, 3).unwrap();
        let mut store = EmbeddingStore::new(8).unwrap();
        store.insert("r_loc_1", p.embed("a").unwrap()).unwrap();
        store.insert("r_loc_2", p.embed("b").unwrap()).unwrap();
        let text = store.to_json_string();
        let back = EmbeddingStore::from_json_str(&text).unwrap();
        assert_eq!(back.len(), 2);
        let v = back.get("r_loc_1").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert!(matches!(back.get("missing"), Err(EmbeddingError::UnknownKey(_))));

        let bad = r#"{"dimension": 2, "vectors": {"k": [0.5, 0.5]}}"#;
        assert!(matches!(
            EmbeddingStore::from_json_str(bad),
            Err(EmbeddingError::NotUnitNorm { .. })
        ));
        let short = r#"{"dimension": 3, "vectors": {"k": [1.0, 0.0]}}"#;
        assert!(matches!(
            EmbeddingStore::from_json_str(short),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn file_backed_provider_looks_up_keys() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert("k", Embedding::new(vec![0.6, 0.8]).unwrap()).unwrap();
        let p = EmbeddingProvider::FileBacked(Arc::new(store));
        assert_eq!(p.kind(), ProviderKind::FileBacked);
        assert_eq!(p.embed("k").unwrap().values(), &[0.6, 0.8]);
        assert!(matches!(p.embed("other"), Err(EmbeddingError::UnknownKey(_))));
    }
}
