//! Configuration file shared by the CLI and the service.
//!
//! TOML; every section and key is optional. Relative paths are resolved
//! against the directory holding the config file. Environment variables
//! (see [`ENV_OVERRIDES`]) win over file values.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{Catalog, DatastoreError};
use crate::embedder::{EmbedError, HashingEmbedder, HttpEmbedder, TextEmbedder};
use crate::pipeline::{Engine, PipelineConfig};
use crate::reasoning::{CacheMode, HttpMllm, InvokeError, Mllm, MllmConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("no catalog configured (set catalog.dir or pass --catalog)")]
    NoCatalog,
    #[error(transparent)]
    Catalog(#[from] DatastoreError),
    #[error("embedder setup failed: {0}")]
    Embedder(#[from] EmbedError),
    #[error("model client setup failed: {0}")]
    Mllm(#[from] InvokeError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    /// Directory with `manifest.ldj` and `images.aemb`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    /// Defaults to `cache/` inside the catalog directory.
    pub dir: Option<PathBuf>,
    pub mode: CacheMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Offline bag-of-words hashing at the catalog dimension.
    #[default]
    Hashing,
    /// The embedding sidecar over HTTP.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    pub url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashing,
            url: "http://127.0.0.1:8700".into(),
            model: "fashion-clip".into(),
            timeout_secs: 30.0,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub parallelism: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub request_timeout_secs: f64,
    /// Allowed browser origins; `["*"]` allows any.
    pub cors_origins: Vec<String>,
    /// Upper bound on reasoning jobs running at once.
    pub max_concurrent_requests: usize,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            request_timeout_secs: 120.0,
            cors_origins: vec!["http://localhost:5173".into()],
            max_concurrent_requests: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub catalog: CatalogSection,
    pub cache: CacheSection,
    pub mllm: MllmConfig,
    pub embedder: EmbedderSection,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub service: ServiceSection,
}

/// Environment variables and the keys they override.
pub const ENV_OVERRIDES: &[(&str, &str)] = &[
    ("AESTHETE_CATALOG_DIR", "catalog.dir"),
    ("AESTHETE_CACHE_DIR", "cache.dir"),
    ("AESTHETE_MODE", "cache.mode"),
    ("AESTHETE_MLLM_ENDPOINT", "mllm.endpoint"),
    ("AESTHETE_MLLM_MODEL", "mllm.model"),
    ("AESTHETE_EMBEDDER", "embedder.kind"),
    ("AESTHETE_EMBEDDER_URL", "embedder.url"),
    ("AESTHETE_PARALLELISM", "eval.parallelism"),
    ("AESTHETE_BIND", "service.bind"),
];

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

impl AppConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), reason: e.to_string() })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads the file at `path`. A missing file is an error.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, path)
    }

    /// File (if given) plus environment overrides, validated.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        if let Some(dir) = self.catalog.dir.as_mut() {
            fix(dir);
        }
        if let Some(dir) = self.cache.dir.as_mut() {
            fix(dir);
        }
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("AESTHETE_CATALOG_DIR") {
            self.catalog.dir = Some(v.into());
        }
        if let Some(v) = get("AESTHETE_CACHE_DIR") {
            self.cache.dir = Some(v.into());
        }
        if let Some(v) = get("AESTHETE_MODE") {
            self.cache.mode = match v.trim() {
                "live" => CacheMode::Live,
                "replay" => CacheMode::Replay,
                other => return Err(invalid("AESTHETE_MODE", format!("expected live or replay, got `{other}`"))),
            };
        }
        if let Some(v) = get("AESTHETE_MLLM_ENDPOINT") {
            self.mllm.endpoint = v;
        }
        if let Some(v) = get("AESTHETE_MLLM_MODEL") {
            self.mllm.model = v.clone();
            self.pipeline.model = v;
        }
        if let Some(v) = get("AESTHETE_EMBEDDER") {
            self.embedder.kind = match v.trim() {
                "hashing" => EmbedderKind::Hashing,
                "http" => EmbedderKind::Http,
                other => return Err(invalid("AESTHETE_EMBEDDER", format!("expected hashing or http, got `{other}`"))),
            };
        }
        if let Some(v) = get("AESTHETE_EMBEDDER_URL") {
            self.embedder.url = v;
        }
        if let Some(v) = get("AESTHETE_PARALLELISM") {
            self.eval.parallelism =
                v.trim().parse().map_err(|_| invalid("AESTHETE_PARALLELISM", format!("not a count: `{v}`")))?;
        }
        if let Some(v) = get("AESTHETE_BIND") {
            self.service.bind = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mllm.validate().map_err(|r| invalid("mllm", r))?;
        self.pipeline.validate().map_err(|r| invalid("pipeline", r))?;
        if self.eval.parallelism == 0 {
            return Err(invalid("eval.parallelism", "must be >= 1"));
        }
        if self.service.request_timeout_secs.is_nan() || self.service.request_timeout_secs <= 0.0 {
            return Err(invalid("service.request_timeout_secs", "must be > 0"));
        }
        if self.service.max_concurrent_requests == 0 {
            return Err(invalid("service.max_concurrent_requests", "must be >= 1"));
        }
        Ok(())
    }

    /// Pipeline settings with the model and mode taken from their sections.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig { model: self.mllm.model.clone(), mode: self.cache.mode, ..self.pipeline.clone() }
    }

    pub fn cache_dir(&self) -> Result<PathBuf, ConfigError> {
        match (&self.cache.dir, &self.catalog.dir) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(c)) => Ok(c.join("cache")),
            (None, None) => Err(ConfigError::NoCatalog),
        }
    }

    pub fn load_catalog(&self) -> Result<Catalog, ConfigError> {
        let dir = self.catalog.dir.as_ref().ok_or(ConfigError::NoCatalog)?;
        Ok(Catalog::load_dir(dir)?)
    }

    pub fn build_embedder(&self, dim: usize) -> Result<Arc<dyn TextEmbedder>, ConfigError> {
        Ok(match self.embedder.kind {
            EmbedderKind::Hashing => Arc::new(HashingEmbedder::new(dim)),
            EmbedderKind::Http => Arc::new(HttpEmbedder::new(
                &self.embedder.url,
                &self.embedder.model,
                Duration::from_secs_f64(self.embedder.timeout_secs),
                self.embedder.max_retries,
            )?),
        })
    }

    /// Loads the catalog and wires the clients. In replay mode no model
    /// client is created.
    ///
    /// Builds blocking HTTP clients, so call it outside any async runtime.
    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let catalog = Arc::new(self.load_catalog()?);
        let embedder = self.build_embedder(catalog.dim())?;
        let mllm: Option<Arc<dyn Mllm>> = match self.cache.mode {
            CacheMode::Replay => None,
            CacheMode::Live => Some(Arc::new(HttpMllm::new(self.mllm.clone())?)),
        };
        Ok(Engine::new(catalog, embedder, mllm, self.mllm.clone(), self.cache_dir()?))
    }
}
