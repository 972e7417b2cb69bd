//! Aesthetic reasoning: prompt the multimodal model, parse its structured
//! answer and keep every transcript in a content-addressed cache so runs can
//! be replayed without network access.

mod cache;
mod client;
mod parse;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute::AestheticAttribute;

pub use cache::{
    cache_key, prepare, reason_cached, CacheMode, CachedReasoning, ReasoningRequest, TranscriptCache,
    RECORD_FORMAT,
};
pub use client::{invoke_mllm, request_body, response_text, Completion, HttpMllm, Mllm};
pub use parse::{extract_object, parse_reasoning, ParsedReasoning};
pub use prompt::{
    build_prompt, ImageAttachment, ImagePayload, ImageSource, LabeledImage, PromptBundle, PromptVariant, TaskInput,
    PROMPT_VERSION, STEP_AESTHETIC_THOUGHTS, STEP_IDENTIFY, STEP_TARGET_DESCRIPTION,
};

/// A SHA-256 digest, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", self.to_hex())
    }
}

impl Serialize for Digest32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest32::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex characters"))
    }
}

/// One attribute's keyword and the reason given for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeThought {
    pub keyword: String,
    pub reason: String,
}

impl AttributeThought {
    /// `None` when the keyword is blank.
    pub fn new(keyword: impl Into<String>, reason: impl Into<String>) -> Option<Self> {
        let keyword = keyword.into().trim().to_string();
        if keyword.is_empty() {
            return None;
        }
        Some(Self { keyword, reason: reason.into().trim().to_string() })
    }

    /// The text that gets embedded for this attribute.
    pub fn embedding_text(&self) -> String {
        if self.reason.is_empty() {
            self.keyword.clone()
        } else {
            format!("{}. {}", self.keyword, self.reason)
        }
    }
}

/// Per-attribute thoughts; attributes without a usable thought are listed as
/// incomplete.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AestheticProfile {
    pub thoughts: BTreeMap<AestheticAttribute, AttributeThought>,
    pub incomplete: Vec<AestheticAttribute>,
}

impl AestheticProfile {
    pub fn from_thoughts(thoughts: BTreeMap<AestheticAttribute, AttributeThought>) -> Self {
        let incomplete = AestheticAttribute::ALL.into_iter().filter(|a| !thoughts.contains_key(a)).collect();
        Self { thoughts, incomplete }
    }

    pub fn is_complete(&self) -> bool {
        self.incomplete.is_empty()
    }

    pub fn is_complete_for(&self, attr: AestheticAttribute) -> bool {
        self.thoughts.contains_key(&attr)
    }
}

/// The parsed model output plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRecord {
    pub identification_summary: String,
    pub target_description: String,
    pub profile: AestheticProfile,
    pub model_id: String,
    pub prompt_hash: Digest32,
    pub raw_response: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageTransport {
    /// Image bytes embedded as base64 `data:` URLs.
    #[default]
    Inline,
    /// Image locations sent as URLs.
    Url,
}

/// Connection and sampling settings for the model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_images: usize,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    /// Token-bucket rate; 0 disables rate limiting.
    pub requests_per_second: f64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub image_transport: ImageTransport,
}

/// Environment variable that, when set, overrides `api_key_env`.
pub const API_KEY_OVERRIDE_ENV: &str = "AESTHETE_MLLM_API_KEY";

impl Default for MllmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 3,
            max_images: 16,
            backoff_base_ms: 500,
            max_in_flight: 4,
            requests_per_second: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            image_transport: ImageTransport::Inline,
        }
    }
}

impl MllmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("timeout_secs must be > 0, got {}", self.timeout_secs));
        }
        if self.max_images == 0 {
            return Err("max_images must be >= 1".into());
        }
        if self.model.trim().is_empty() {
            return Err("model name is empty".into());
        }
        if self.requests_per_second.is_nan() || self.requests_per_second < 0.0 {
            return Err("requests_per_second must be >= 0".into());
        }
        Ok(())
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(API_KEY_OVERRIDE_ENV)
            .ok()
            .or_else(|| std::env::var(&self.api_key_env).ok())
            .filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvokeError {
    #[error("model endpoint unavailable after {attempts} attempt(s): {detail}")]
    EndpointUnavailable { attempts: u32, detail: String },
    #[error("model request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("model endpoint rejected credentials (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("model endpoint rate limited the request after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("model endpoint rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed model response: {0}")]
    InvalidResponse(String),
}

impl InvokeError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            InvokeError::EndpointUnavailable { .. } | InvokeError::Timeout { .. } | InvokeError::RateLimited { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty response")]
    EmptyResponse,
    #[error("no parsable JSON object in response")]
    NoParsableObject,
    #[error("response has no target description")]
    MissingTargetDescription,
}

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("outfit has no images")]
    EmptyOutfit,
    #[error("cannot read image {path}: {source}")]
    UnreadableImage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{count} images exceed the per-request limit of {max}")]
    TooManyImages { count: usize, max: usize },
    #[error(transparent)]
    Invoke(#[from] InvokeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no cached transcript for key {key} (replay mode)")]
    CacheMissInReplayMode { key: String },
    #[error("live reasoning requested but no model client is configured")]
    NoClient,
    #[error("transcript cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt transcript {path}: {reason}")]
    CorruptRecord { path: PathBuf, reason: String },
}

impl ReasoningError {
    /// Whether the failure is due to the model endpoint (rather than inputs).
    pub fn is_unavailable(&self) -> bool {
        matches!(self, ReasoningError::Invoke(_) | ReasoningError::NoClient)
    }
}
