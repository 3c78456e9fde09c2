//! Text embedders and the similarity kernel.
//!
//! Two backends sit behind [`Embedder`]: a deterministic feature-hashed
//! bag-of-words model that needs no network, and an OpenAI-compatible HTTP
//! embeddings endpoint. Both go through the same exact-text cache.

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Result, ToolshedError};
use crate::llm::{post_json, provider_error};

pub const DEFAULT_DIMENSION: usize = 256;
pub const ENV_EMBED_ENDPOINT: &str = "TOOLSHED_EMBED_ENDPOINT";
pub const ENV_EMBED_KEY: &str = "TOOLSHED_EMBED_KEY";
pub const ENV_EMBED_MODEL: &str = "TOOLSHED_EMBED_MODEL";

const CACHE_MAGIC: &[u8; 4] = b"TSEC";
const CACHE_VERSION: u32 = 1;

/// A dense vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ToolshedError::contract("embedding vector must have positive dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ToolshedError::contract(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn zeros(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        EmbeddingVector { values: vec![0.0; dimension] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector { values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// Round every component to the nearest `f32`. Stored vectors go through
    /// this so that persisting them as 32-bit floats is lossless.
    pub fn to_f32_precision(&self) -> Self {
        EmbeddingVector { values: self.values.iter().map(|&v| v as f32 as f64).collect() }
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Feature-hashed bag of words: lowercase, split on non-alphanumerics, count
/// each token into bucket `fnv1a64(token) % dimension`, then L2-normalize.
/// Text without tokens maps to the zero vector.
pub fn hashed_bow_embed(text: &str, dimension: usize) -> EmbeddingVector {
    assert!(dimension >= 2, "hashed bag-of-words needs dimension >= 2, got {dimension}");
    let mut values = vec![0.0f64; dimension];
    let lowered = text.to_lowercase();
    for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let bucket = (fnv1a64(token.as_bytes()) % dimension as u64) as usize;
        values[bucket] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector { values }
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is zero.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(ToolshedError::contract(format!(
            "cannot compare vectors of dimension {} and {}",
            a.dimension(),
            b.dimension()
        )));
    }
    Ok(cosine_unchecked(a.values(), b.values()))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub(crate) fn squared_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x)
}

/// A query reduced to its nonzero coordinates. Dropped terms are exact
/// zeros, so `cosine` is bit-identical to `cosine_unchecked`.
pub(crate) struct SparseQuery {
    terms: Vec<(usize, f64)>,
    squared_norm: f64,
}

impl SparseQuery {
    pub(crate) fn new(values: &[f64]) -> Self {
        let terms: Vec<(usize, f64)> = values.iter().copied().enumerate().filter(|&(_, x)| x != 0.0).collect();
        SparseQuery { squared_norm: terms.iter().fold(0.0, |acc, &(_, x)| acc + x * x), terms }
    }

    pub(crate) fn cosine(&self, other: &[f64], other_squared_norm: f64) -> f64 {
        if self.squared_norm == 0.0 || other_squared_norm == 0.0 {
            return 0.0;
        }
        let dot = self.terms.iter().fold(0.0, |acc, &(i, x)| acc + x * other[i]);
        (dot / (self.squared_norm.sqrt() * other_squared_norm.sqrt())).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    OfflineHashedBow,
    Http,
}

/// How to obtain embeddings. Credentials never live here; the HTTP key is
/// read from the environment when the embedder is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::offline(DEFAULT_DIMENSION)
    }
}

impl ProviderConfig {
    pub fn offline(dimension: usize) -> Self {
        ProviderConfig {
            mode: ProviderMode::OfflineHashedBow,
            dimension,
            endpoint: None,
            model: None,
            cache_path: None,
        }
    }

    /// HTTP mode when `TOOLSHED_EMBED_ENDPOINT` is set, offline otherwise.
    pub fn from_env(dimension: usize) -> Self {
        match std::env::var(ENV_EMBED_ENDPOINT).ok().filter(|s| !s.is_empty()) {
            Some(endpoint) => ProviderConfig {
                mode: ProviderMode::Http,
                dimension,
                endpoint: Some(endpoint),
                model: std::env::var(ENV_EMBED_MODEL).ok().filter(|s| !s.is_empty()),
                cache_path: None,
            },
            None => ProviderConfig::offline(dimension),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ProviderMode::OfflineHashedBow if self.dimension < 2 => Err(ToolshedError::config(
                format!("offline embedder needs dimension >= 2, got {}", self.dimension),
            )),
            ProviderMode::Http if self.dimension == 0 => {
                Err(ToolshedError::config("http embedder needs a positive dimension"))
            }
            ProviderMode::Http if self.endpoint.is_none() => {
                Err(ToolshedError::config(format!("http embedder needs an endpoint ({ENV_EMBED_ENDPOINT})")))
            }
            _ => Ok(()),
        }
    }
}

/// Raw vector source. Implementations need not cache.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>>;

    /// Stable description of the model, used in index fingerprints.
    fn identity(&self) -> String;

    fn accepts_empty_text(&self) -> bool {
        false
    }
}

pub struct HashedBowBackend {
    dimension: usize,
}

impl HashedBowBackend {
    pub fn new(dimension: usize) -> Self {
        HashedBowBackend { dimension }
    }
}

impl EmbeddingBackend for HashedBowBackend {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        Ok(hashed_bow_embed(text, self.dimension).values)
    }

    fn identity(&self) -> String {
        format!("hashed_bow:fnv1a64:{}", self.dimension)
    }

    fn accepts_empty_text(&self) -> bool {
        true
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbeddingBackend {
    endpoint: String,
    key: Option<String>,
    model: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbeddingBackend {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: Option<String>) -> Self {
        HttpEmbeddingBackend {
            endpoint: endpoint.into(),
            key,
            model,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        let mut body = serde_json::json!({ "input": text });
        if let Some(model) = &self.model {
            body["model"] = Value::String(model.clone());
        }
        let response = post_json(&self.agent, &self.endpoint, self.key.as_deref(), &body)?;
        let values = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| provider_error("embedding response has no data[0].embedding array", None))?;
        values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| provider_error("embedding contains a non-number", None)))
            .collect()
    }

    fn identity(&self) -> String {
        format!("http:{}#{}", self.endpoint, self.model.as_deref().unwrap_or("default"))
    }
}

/// Cached embedder. Safe to share across threads: lookups take a read lock,
/// inserts a write lock.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    dimension: usize,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
    provider_calls: AtomicU64,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("backend", &self.backend.identity())
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl Embedder {
    pub fn offline(dimension: usize) -> Self {
        Self::with_backend(Box::new(HashedBowBackend::new(dimension)), dimension)
    }

    pub fn with_backend(backend: Box<dyn EmbeddingBackend>, dimension: usize) -> Self {
        Embedder {
            backend,
            dimension,
            cache: RwLock::new(HashMap::new()),
            provider_calls: AtomicU64::new(0),
        }
    }

    /// Build the embedder a config describes, loading its cache file if one
    /// exists.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        config.validate()?;
        let embedder = match config.mode {
            ProviderMode::OfflineHashedBow => Self::offline(config.dimension),
            ProviderMode::Http => {
                let key = std::env::var(ENV_EMBED_KEY).ok().filter(|s| !s.is_empty());
                let backend = HttpEmbeddingBackend::new(
                    config.endpoint.clone().expect("validated"),
                    key,
                    config.model.clone(),
                );
                Self::with_backend(Box::new(backend), config.dimension)
            }
        };
        if let Some(path) = &config.cache_path {
            if path.exists() {
                embedder.load_cache(path)?;
            }
        }
        Ok(embedder)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    /// Number of requests that reached the backend (cache misses).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(hit) = self.cache.read().unwrap().get(text) {
            return Ok(hit.clone());
        }
        if text.is_empty() && !self.backend.accepts_empty_text() {
            return Err(ToolshedError::contract("cannot embed empty text with this provider"));
        }
        self.provider_calls.fetch_add(1, Ordering::Relaxed);
        let raw = self.backend.embed_raw(text)?;
        if raw.len() != self.dimension {
            return Err(ToolshedError::config(format!(
                "provider returned {} values but the configured dimension is {}",
                raw.len(),
                self.dimension
            )));
        }
        let vector = EmbeddingVector::new(raw)?;
        self.cache.write().unwrap().entry(text.to_owned()).or_insert_with(|| vector.clone());
        Ok(vector)
    }

    /// Serialize the cache: magic, version, backend identity, then per entry
    /// (text hash, text length, text, dimension, f64 values). Entries are
    /// sorted by text so identical caches produce identical bytes.
    pub fn cache_to_bytes(&self) -> Vec<u8> {
        let cache = self.cache.read().unwrap();
        let mut entries: Vec<_> = cache.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let mut w = ByteWriter::default();
        w.bytes(CACHE_MAGIC);
        w.u32(CACHE_VERSION);
        w.str(&self.identity());
        w.u64(entries.len() as u64);
        for (text, vector) in entries {
            w.u64(fnv1a64(text.as_bytes()));
            w.u64(text.len() as u64);
            w.bytes(text.as_bytes());
            w.u32(vector.dimension() as u32);
            for &v in vector.values() {
                w.f64(v);
            }
        }
        w.buf
    }

    /// Merge a serialized cache into this embedder. Returns how many entries
    /// were loaded.
    pub fn load_cache_bytes(&self, bytes: &[u8]) -> Result<usize> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != CACHE_MAGIC {
            return Err(ToolshedError::Load { offset: 0, message: "not an embedding cache file".into() });
        }
        let version = r.u32("version")?;
        if version != CACHE_VERSION {
            return Err(r.error(format!("unsupported cache version {version}")));
        }
        let identity = r.str("embedder identity")?;
        if identity != self.identity() {
            return Err(ToolshedError::config(format!(
                "embedding cache was written by `{identity}`, current embedder is `{}`",
                self.identity()
            )));
        }
        let count = r.count("entry count", 20)?;
        let mut loaded = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let hash = r.u64("text hash")?;
            let len = r.u64("text length")? as usize;
            let text = std::str::from_utf8(r.take(len, "cached text")?)
                .map_err(|_| ToolshedError::Load { offset: at, message: "cached text is not UTF-8".into() })?
                .to_owned();
            if fnv1a64(text.as_bytes()) != hash {
                return Err(ToolshedError::Load { offset: at, message: "cache entry hash mismatch".into() });
            }
            let dim = r.u32("dimension")? as usize;
            if dim != self.dimension {
                return Err(r.error(format!("cache entry has dimension {dim}, expected {}", self.dimension)));
            }
            let values = (0..dim).map(|_| r.f64("vector component")).collect::<Result<Vec<_>>>()?;
            let vector = EmbeddingVector::new(values).map_err(|e| r.error(e.to_string()))?;
            loaded.push((text, vector));
        }
        if !r.is_at_end() {
            return Err(r.error("trailing bytes after last cache entry"));
        }
        let n = loaded.len();
        self.cache.write().unwrap().extend(loaded);
        Ok(n)
    }

    pub fn load_cache(&self, path: &Path) -> Result<usize> {
        self.load_cache_bytes(&std::fs::read(path)?)
    }
}
