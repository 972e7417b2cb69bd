//! Content-addressed transcript cache.
//!
//! One file per key at `<root>/reasoning/<hex-key>.record`. The key covers the
//! prompt bytes, the image digests, the model name and the temperature, so a
//! hit is always a valid answer for the request that produced it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::client::Mllm;
use super::parse::parse_reasoning;
use super::prompt::{build_prompt, ImageSource, PromptBundle, PromptVariant, TaskInput};
use super::{Digest32, MllmConfig, ParseError, ReasoningError, ReasoningRecord};

pub const RECORD_FORMAT: &str = "aesthete/reasoning-record@1";
const RECORD_DIR: &str = "reasoning";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Misses call the model and store the result.
    #[default]
    Live,
    /// Misses are errors; the model is never called.
    Replay,
}

impl std::fmt::Display for CacheMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CacheMode::Live => "live",
            CacheMode::Replay => "replay",
        })
    }
}

/// Cache key: SHA-256 over the prompt hash, model name and temperature.
pub fn cache_key(prompt: &PromptBundle, model: &str, temperature: f64) -> Digest32 {
    let mut h = Sha256::new();
    h.update(prompt.prompt_hash().0);
    h.update((model.len() as u64).to_le_bytes());
    h.update(model.as_bytes());
    h.update(temperature.to_bits().to_le_bytes());
    Digest32(h.finalize().into())
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    key: Digest32,
    record: ReasoningRecord,
}

#[derive(Debug, Clone)]
pub struct TranscriptCache {
    root: PathBuf,
    mode: CacheMode,
}

impl TranscriptCache {
    pub fn new(root: impl Into<PathBuf>, mode: CacheMode) -> Self {
        Self { root: root.into(), mode }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &Digest32) -> PathBuf {
        self.root.join(RECORD_DIR).join(format!("{}.record", key.to_hex()))
    }

    pub fn get(&self, key: &Digest32) -> Result<Option<ReasoningRecord>, ReasoningError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ReasoningError::Cache { path, source: e }),
        };
        let env: Envelope = serde_json::from_str(&text)
            .map_err(|e| ReasoningError::CorruptRecord { path: path.clone(), reason: e.to_string() })?;
        if env.format != RECORD_FORMAT {
            return Err(ReasoningError::CorruptRecord { path, reason: format!("unknown format `{}`", env.format) });
        }
        if env.key != *key {
            return Err(ReasoningError::CorruptRecord { path, reason: "stored key does not match file name".into() });
        }
        Ok(Some(env.record))
    }

    /// Serialized form of a record, exactly as written to disk.
    pub fn encode(key: &Digest32, record: &ReasoningRecord) -> String {
        let env = Envelope { format: RECORD_FORMAT.to_string(), key: *key, record: record.clone() };
        let mut s = serde_json::to_string_pretty(&env).expect("record serializes");
        s.push('\n');
        s
    }

    /// Writes atomically (temp file + rename); concurrent writers of the same
    /// key write the same content, so the last rename wins harmlessly.
    pub fn put(&self, key: &Digest32, record: &ReasoningRecord) -> Result<PathBuf, ReasoningError> {
        let path = self.path_for(key);
        let dir = path.parent().expect("record path has a parent");
        fs::create_dir_all(dir).map_err(|e| ReasoningError::Cache { path: dir.to_path_buf(), source: e })?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key.to_hex(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(Self::encode(key, record).as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            ReasoningError::Cache { path: path.clone(), source: e }
        })?;
        Ok(path)
    }
}

/// Everything needed to render one reasoning prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningRequest {
    pub outfit_images: Vec<ImageSource>,
    pub task: TaskInput,
    pub variant: PromptVariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedReasoning {
    pub key: Digest32,
    pub record: ReasoningRecord,
    pub from_cache: bool,
    /// Model calls made for this request (0 on a hit).
    pub invocations: u32,
}

/// Renders the prompt and returns its cache key without touching the model.
pub fn prepare(request: &ReasoningRequest, config: &MllmConfig) -> Result<(PromptBundle, Digest32), ReasoningError> {
    let prompt = build_prompt(
        &request.outfit_images,
        &request.task,
        request.variant,
        config.image_transport,
        config.max_images,
    )?;
    let key = cache_key(&prompt, &config.model, config.temperature);
    Ok((prompt, key))
}

/// Cache-first reasoning.
///
/// On a miss in live mode the model is called; if its answer cannot be parsed
/// the model is called exactly once more before giving up.
pub fn reason_cached(
    request: &ReasoningRequest,
    client: Option<&dyn Mllm>,
    config: &MllmConfig,
    cache: &TranscriptCache,
) -> Result<CachedReasoning, ReasoningError> {
    let (prompt, key) = prepare(request, config)?;
    if let Some(record) = cache.get(&key)? {
        return Ok(CachedReasoning { key, record, from_cache: true, invocations: 0 });
    }
    if cache.mode() == CacheMode::Replay {
        return Err(ReasoningError::CacheMissInReplayMode { key: key.to_hex() });
    }
    let client = client.ok_or(ReasoningError::NoClient)?;

    let mut last_err: Option<ParseError> = None;
    for invocations in 1..=2 {
        let completion = client.complete(&prompt)?;
        match parse_reasoning(&completion.text) {
            Ok(parsed) => {
                let record = ReasoningRecord {
                    identification_summary: parsed.identification_summary,
                    target_description: parsed.target_description,
                    profile: parsed.profile,
                    model_id: config.model.clone(),
                    prompt_hash: prompt.prompt_hash(),
                    raw_response: completion.text,
                    created_at: chrono::Utc::now(),
                };
                cache.put(&key, &record)?;
                return Ok(CachedReasoning { key, record, from_cache: false, invocations });
            }
            Err(e) => {
                tracing::warn!(error = %e, key = %key.to_hex(), "unparsable model response");
                last_err = Some(e);
            }
        }
    }
    Err(ReasoningError::Parse(last_err.expect("two failed attempts")))
}
