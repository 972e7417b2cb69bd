//! Catalog ingest, the `AEMB` embedding format and benchmark question sets.

pub mod aemb;
mod catalog;
mod questions;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use aemb::{read_embeddings, write_embeddings, EmbeddingFile, EmbeddingRecord};
pub use catalog::{
    candidate_pool, load_catalog, Catalog, Item, ManifestRecord, PoolMember, DEFAULT_POOL_SIZE,
    IMAGE_EMBEDDINGS_FILE, MANIFEST_FILE, TEXT_EMBEDDINGS_FILE,
};
pub use questions::{A100Question, CirQuery, FitbQuestion, QuestionSet, TestKind};

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding file: {reason}")]
    Format { reason: String },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: String, expected: usize, found: usize },
    #[error("embedding for `{item_id}` has norm {norm:.6}, outside the accepted band [0.99, 1.01]")]
    NormOutOfBand { item_id: String, norm: f64 },
    #[error("embedding for `{id}` contains non-finite values")]
    NonFinite { id: String },
    #[error("no embedding row for item `{0}`")]
    MissingEmbedding(String),
    #[error("duplicate item id `{0}`")]
    DuplicateItemId(String),
    #[error("{path}:{line}: {reason}")]
    InvalidRecord { path: PathBuf, line: usize, reason: String },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("category `{0}` has no items")]
    EmptyCategory(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("question `{id}`: {reason}")]
    InvalidQuestion { id: String, reason: String },
    #[error("pool size must be at least 1")]
    EmptyPool,
}

impl DatastoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatastoreError::Io { path: path.to_path_buf(), source }
    }

    /// True for errors caused by the content of the inputs (as opposed to I/O).
    pub fn is_validation(&self) -> bool {
        !matches!(self, DatastoreError::Io { .. })
    }
}

/// Reads a line-delimited JSON file. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_ldj<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatastoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatastoreError::io(path, e))?;
    parse_ldj(&text, path)
}

pub(crate) fn parse_ldj<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>, DatastoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatastoreError::InvalidRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_ldj<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), DatastoreError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DatastoreError::io(path, e))
}
