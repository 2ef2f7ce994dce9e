//! Sentence-embedding providers.
//!
//! Every provider sees text that already carries its role prefix; the
//! prefix is applied once in [`EmbeddingProvider::embed`] and retries go
//! through [`EmbeddingProvider::embed_prefixed`] so it is never doubled.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::remote::{JsonClient, RemoteError};

pub type EmbeddingVector = Vec<f32>;

pub const DEFAULT_DIM: usize = 384;
pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingRole {
    Query,
    Passage,
}

impl EmbeddingRole {
    pub fn prefix(self) -> &'static str {
        match self {
            EmbeddingRole::Query => "query: ",
            EmbeddingRole::Passage => "passage: ",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingRole::Query => "query",
            EmbeddingRole::Passage => "passage",
        }
    }

    /// The role whose prefix `text` starts with, if any.
    pub fn of_prefixed(text: &str) -> Option<Self> {
        [EmbeddingRole::Query, EmbeddingRole::Passage]
            .into_iter()
            .find(|r| text.starts_with(r.prefix()))
    }

    pub fn apply(self, text: &str) -> String {
        format!("{}{}", self.prefix(), text)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding provider unavailable: {0}")]
    Unavailable(#[from] RemoteError),
    #[error("embedding dimension {got} does not match configured {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("mixed roles in one batch")]
    MixedRoles,
    #[error("invalid provider config: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Unavailable(e) if e.is_retryable())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Embed texts that already carry a role prefix.
    fn embed_prefixed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, texts: &[&str], role: EmbeddingRole) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let prefixed: Vec<String> = texts.iter().map(|t| role.apply(t)).collect();
        self.embed_prefixed(&prefixed)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_prefixed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_prefixed(texts)
    }

    fn embed(&self, texts: &[&str], role: EmbeddingRole) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts, role)
    }
}

/// Prefix once, then try up to `attempts` times on retryable errors.
pub fn embed_with_retry<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[&str],
    role: EmbeddingRole,
    attempts: usize,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let prefixed: Vec<String> = texts.iter().map(|t| role.apply(t)).collect();
    let mut last = None;
    for attempt in 0..attempts.max(1) {
        match provider.embed_prefixed(&prefixed) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() => {
                log::warn!("embedding attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Scale to unit L2 norm in place; the zero vector becomes e_0.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Seeded 64-bit FNV-1a over UTF-8 bytes, finished with a splitmix64 mix
/// so nearby inputs land in unrelated buckets.
pub fn seeded_hash(seed: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic local embedder over signed hashed character 3-grams.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim < MIN_DIM {
            return Err(EmbedError::Config(format!("dimension {dim} is below the minimum {MIN_DIM}")));
        }
        Ok(Self { dim, seed })
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0f32; self.dim];
        let chars: Vec<char> = text.chars().collect();
        let mut gram = String::with_capacity(12);
        for w in chars.windows(3) {
            gram.clear();
            gram.extend(w);
            let h = seeded_hash(self.seed, &gram);
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_prefixed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
    role: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

/// HTTP provider: one batched POST per call.
///
/// The server receives the prefixed texts together with the role name.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            client: JsonClient::new(endpoint, timeout, max_in_flight),
            dim,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_prefixed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let role = match texts.first().and_then(|t| EmbeddingRole::of_prefixed(t)) {
            Some(r) if texts.iter().all(|t| t.starts_with(r.prefix())) => r,
            Some(_) => return Err(EmbedError::MixedRoles),
            None if texts.is_empty() => return Err(EmbedError::EmptyInput),
            None => return Err(EmbedError::MixedRoles),
        };
        let req = EmbedRequest {
            texts: texts.iter().map(String::as_str).collect(),
            role: role.as_str(),
        };
        let resp: EmbedResponse = self.client.post(&req)?;
        if resp.dim != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: resp.dim,
            });
        }
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: resp.vectors.len(),
            });
        }
        resp.vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                l2_normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}

/// Wraps a provider and counts calls and embedded texts.
#[derive(Debug, Default)]
pub struct CountingEmbedder<P> {
    inner: P,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl<P> CountingEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingEmbedder<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_prefixed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed_prefixed(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    HashMock,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remote" => Ok(ProviderKind::Remote),
            "hash-mock" => Ok(ProviderKind::HashMock),
            other => Err(format!("unknown provider kind {other:?} (expected remote or hash-mock)")),
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProviderKind::Remote => "remote",
            ProviderKind::HashMock => "hash-mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub dim: usize,
    pub timeout_ms: u64,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::HashMock,
            endpoint: String::new(),
            dim: DEFAULT_DIM,
            timeout_ms: 10_000,
            seed: 42,
            max_in_flight: 4,
        }
    }
}

pub fn build_embedder(config: &ProviderConfig) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
    if config.dim < MIN_DIM {
        return Err(EmbedError::Config(format!("dimension {} is below the minimum {MIN_DIM}", config.dim)));
    }
    Ok(match config.kind {
        ProviderKind::HashMock => Arc::new(HashEmbedder::new(config.dim, config.seed)?),
        ProviderKind::Remote => {
            if config.endpoint.is_empty() {
                return Err(EmbedError::Config("remote provider needs an endpoint".into()));
            }
            Arc::new(RemoteEmbedder::new(
                config.endpoint.clone(),
                config.dim,
                Duration::from_millis(config.timeout_ms),
                config.max_in_flight,
            ))
        }
    })
}
