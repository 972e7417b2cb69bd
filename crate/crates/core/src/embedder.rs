//! Text encoders used at query time for the target description and the
//! attribute thoughts.
//!
//! Encoders return raw vectors; normalization is done here, engine-side, by
//! [`embed_unit`].

use std::collections::HashMap;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::fusion::{normalize, FusionError, UnitVector};

/// Largest batch the sidecar accepts per request.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedder returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedder response: {0}")]
    InvalidResponse(String),
    #[error("embedding dimension {found} does not match catalog dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding for `{text}` is degenerate: {source}")]
    Degenerate {
        text: String,
        #[source]
        source: FusionError,
    },
    #[error("no embedding known for `{0}`")]
    UnknownText(String),
}

pub trait TextEmbedder: Send + Sync {
    fn model_id(&self) -> &str;

    /// Raw (unnormalized) vectors, one per input, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn reachable(&self) -> bool {
        true
    }
}

/// Embeds and unit-normalizes `texts`, checking every vector has `dim` entries.
pub fn embed_unit(embedder: &dyn TextEmbedder, texts: &[String], dim: usize) -> Result<Vec<UnitVector>, EmbedError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText);
    }
    let raw = embedder.embed_texts(texts)?;
    if raw.len() != texts.len() {
        return Err(EmbedError::InvalidResponse(format!("{} vectors for {} texts", raw.len(), texts.len())));
    }
    raw.iter()
        .zip(texts)
        .map(|(v, t)| {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch { expected: dim, found: v.len() });
            }
            normalize(v).map_err(|source| EmbedError::Degenerate { text: t.clone(), source })
        })
        .collect()
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for the embedding sidecar (`POST /embed/text`, `GET /health`).
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    http: Client,
    max_retries: u32,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout: Duration, max_retries: u32) -> Result<Self, EmbedError> {
        let http = Client::builder().timeout(timeout).build().map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), model: model.into(), http, max_retries })
    }

    fn post_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let url = format!("{}/embed/text", self.base_url);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = self
                .http
                .post(&url)
                .json(&EmbedTextRequest { model: &self.model, texts })
                .send()
                .map_err(|e| EmbedError::Unavailable(e.to_string()))
                .and_then(|resp| {
                    let status = resp.status();
                    if status.is_success() {
                        resp.json::<EmbedResponse>()
                            .map(|r| r.vectors)
                            .map_err(|e| EmbedError::InvalidResponse(e.to_string()))
                    } else if status.as_u16() == 503 {
                        Err(EmbedError::Unavailable("embedder is loading (HTTP 503)".into()))
                    } else {
                        Err(EmbedError::Status { status: status.as_u16(), body: resp.text().unwrap_or_default() })
                    }
                });
            match result {
                Err(EmbedError::Unavailable(detail)) if attempt <= self.max_retries => {
                    tracing::warn!(attempt, %detail, "retrying embedder request");
                    std::thread::sleep(Duration::from_millis(100 * (1 << (attempt - 1).min(6))));
                }
                other => return other,
            }
        }
    }
}

impl TextEmbedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(MAX_BATCH) {
            let vectors = self.post_batch(batch)?;
            if vectors.len() != batch.len() {
                return Err(EmbedError::InvalidResponse(format!("{} vectors for {} texts", vectors.len(), batch.len())));
            }
            out.extend(vectors);
        }
        Ok(out)
    }

    fn reachable(&self) -> bool {
        self.http
            .get(format!("{}/health", self.base_url))
            .timeout(Duration::from_secs(2))
            .send()
            .map(|r| r.status().is_success())
            .unwrap_or(false)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of", "on", "or", "that",
    "the", "this", "to", "with",
];

/// Deterministic bag-of-words feature hashing into `dim` buckets.
///
/// Not a semantic encoder: it only makes texts that share words similar. It
/// exists so that benchmarks and tests can run fully offline.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, model_id: format!("hashing-bow-{dim}") }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
            .collect();
        let tokens = if tokens.is_empty() { vec![lowered.trim()] } else { tokens };
        for tok in tokens {
            let h = Sha256::digest(tok.as_bytes());
            // Two signed buckets per token keep collisions from cancelling out.
            for slot in 0..2 {
                let bytes: [u8; 8] = h[slot * 8..slot * 8 + 8].try_into().unwrap();
                let x = u64::from_le_bytes(bytes);
                let idx = (x % self.dim as u64) as usize;
                let sign = if (x >> 63) == 0 { 1.0 } else { -1.0 };
                v[idx] += sign;
            }
        }
        v
    }
}

impl TextEmbedder for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Fixed text-to-vector table, with an optional fallback for other texts.
pub struct StaticEmbedder {
    table: HashMap<String, Vec<f32>>,
    fallback: Option<Box<dyn TextEmbedder>>,
}

impl StaticEmbedder {
    pub fn new(table: HashMap<String, Vec<f32>>) -> Self {
        Self { table, fallback: None }
    }

    pub fn with_fallback(mut self, fallback: Box<dyn TextEmbedder>) -> Self {
        self.fallback = Some(fallback);
        self
    }
}

impl TextEmbedder for StaticEmbedder {
    fn model_id(&self) -> &str {
        "static-table"
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts
            .iter()
            .map(|t| match (self.table.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(f)) => Ok(f.embed_texts(std::slice::from_ref(t))?.remove(0)),
                (None, None) => Err(EmbedError::UnknownText(t.clone())),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_word_sensitive() {
        let e = HashingEmbedder::new(64);
        assert_eq!(e.embed("Red wool coat"), e.embed("red  WOOL, coat"));
        let a = normalize(&e.embed("red wool coat")).unwrap();
        let b = normalize(&e.embed("red wool scarf")).unwrap();
        let c = normalize(&e.embed("silver sandals summer")).unwrap();
        assert!(a.dot(b.as_slice()) > a.dot(c.as_slice()));
    }

    #[test]
    fn embed_unit_checks_dimension_and_text() {
        let e = HashingEmbedder::new(16);
        let texts = vec!["linen shirt".to_string()];
        let v = embed_unit(&e, &texts, 16).unwrap();
        assert!((v[0].norm() - 1.0).abs() < 1e-6);
        assert_eq!(
            embed_unit(&e, &texts, 32).unwrap_err(),
            EmbedError::DimensionMismatch { expected: 32, found: 16 }
        );
        assert_eq!(embed_unit(&e, &["  ".to_string()], 16).unwrap_err(), EmbedError::EmptyText);
    }

    #[test]
    fn static_table_with_fallback() {
        let table = HashMap::from([("x".to_string(), vec![1.0, 0.0])]);
        let s = StaticEmbedder::new(table.clone());
        assert!(matches!(s.embed_texts(&["y".into()]), Err(EmbedError::UnknownText(_))));
        let s = StaticEmbedder::new(table).with_fallback(Box::new(HashingEmbedder::new(2)));
        assert_eq!(s.embed_texts(&["x".into()]).unwrap()[0], vec![1.0, 0.0]);
        assert_eq!(s.embed_texts(&["y".into()]).unwrap()[0].len(), 2);
    }
}
