//! Query embedding providers.
//!
//! [`HashEmbedder`] is a deterministic, offline feature-hashing provider used
//! by the fixtures and tests. [`HttpEmbedder`] speaks the JSON wire protocol
//! `{"input": [str]}` -> `{"vectors": [[float]]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::normalize_in_place;

pub const EMBED_KEY_ENV: &str = "ROUTERAG_EMBED_API_KEY";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed embedding reply: {0}")]
    Malformed(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;

    fn embed_one(&self, input: &str) -> Result<Vec<f64>, EmbeddingError> {
        let mut out = self.embed(&[input.to_string()])?;
        out.pop()
            .ok_or_else(|| EmbeddingError::Malformed("empty reply".into()))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of",
    "on", "or", "that", "the", "this", "to", "was", "were", "what", "which", "who", "with",
];

/// Lower-cased alphanumeric tokens minus a small stopword list.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Seeded signed feature hashing over content tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dimension: 128,
            seed: 0,
        }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension, seed }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut idx = [0u8; 8];
        idx.copy_from_slice(&digest[..8]);
        let slot = (u64::from_le_bytes(idx) % self.dimension as u64) as usize;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        (slot, sign)
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in content_tokens(text) {
            let (slot, sign) = self.bucket(&token);
            v[slot] += sign;
        }
        if !normalize_in_place(&mut v) {
            // no content tokens, or they cancelled out: hash the raw string instead
            v.iter_mut().for_each(|x| *x = 0.0);
            let (slot, sign) = self.bucket(&format!("\u{0}{text}"));
            v[slot] = sign;
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(inputs.iter().map(|s| self.vector(s)).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub input: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Client for a remote embedding endpoint. Requests go to `{base_url}/embed`
/// with an optional bearer token.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::Unreachable(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            token,
        })
    }

    /// Reads the token from [`EMBED_KEY_ENV`].
    pub fn from_env(base_url: &str) -> Result<Self, EmbeddingError> {
        Self::new(base_url, std::env::var(EMBED_KEY_ENV).ok())
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let mut req = self.client.post(&self.url).json(&EmbedRequest {
            input: inputs.to_vec(),
        });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| EmbeddingError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbeddingError::Unreachable(format!(
                "HTTP {}",
                resp.status()
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbeddingError::Malformed(e.to_string()))?;
        if body.vectors.len() != inputs.len() {
            return Err(EmbeddingError::Malformed(format!(
                "expected {} vectors, got {}",
                inputs.len(),
                body.vectors.len()
            )));
        }
        if body
            .vectors
            .iter()
            .any(|v| v.is_empty() || v.iter().any(|x| !x.is_finite()))
        {
            return Err(EmbeddingError::Malformed(
                "vectors must be non-empty and finite".into(),
            ));
        }
        Ok(body.vectors)
    }
}
