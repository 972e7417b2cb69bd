//! `AEMB` binary embedding files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "AEMB"
//! version  u32      1
//! dim      u32
//! count    u64
//! count x { id_len u16, id [id_len] UTF-8, values [dim] f32 }
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::DatastoreError;

pub const MAGIC: &[u8; 4] = b"AEMB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// One keyed vector, exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self { id: id.into(), vector }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

/// Encodes records into the on-disk byte layout.
pub fn encode(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>, DatastoreError> {
    let dim32 = u32::try_from(dim).map_err(|_| DatastoreError::Format {
        reason: format!("dimension {dim} does not fit in u32"),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (2 + 16 + dim * 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for rec in records {
        if rec.vector.len() != dim {
            return Err(DatastoreError::DimensionMismatch {
                context: format!("record `{}`", rec.id),
                expected: dim,
                found: rec.vector.len(),
            });
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(DatastoreError::NonFinite { id: rec.id.clone() });
        }
        let id_len = u16::try_from(rec.id.len()).map_err(|_| DatastoreError::Format {
            reason: format!("id `{}...` longer than 65535 bytes", &rec.id[..16]),
        })?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(rec.id.as_bytes());
        for v in &rec.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `records` to `path`. Every vector must have length `dim` and be
/// finite; nothing is written otherwise.
pub fn write_embeddings(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<(), DatastoreError> {
    let path = path.as_ref();
    let bytes = encode(dim, records)?;
    let file = fs::File::create(path).map_err(|e| DatastoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| DatastoreError::io(path, e))?;
    w.flush().map_err(|e| DatastoreError::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile, DatastoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DatastoreError::io(path, e))?;
    decode(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatastoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            DatastoreError::Format { reason: format!("truncated file while reading {what} at byte {}", self.pos) }
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, DatastoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatastoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DatastoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingFile, DatastoreError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DatastoreError::Format { reason: format!("bad magic {magic:?}, expected \"AEMB\"") });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(DatastoreError::Format { reason: format!("unsupported version {version}") });
    }
    let dim = cur.u32("dim")? as usize;
    let count = cur.u64("count")?;
    // Each record needs at least 2 + 4*dim bytes; reject absurd counts before allocating.
    let min_record = 2 + 4 * dim as u64;
    let remaining = (bytes.len() - cur.pos) as u64;
    if count.saturating_mul(min_record) > remaining {
        return Err(DatastoreError::Format {
            reason: format!("count {count} exceeds what {remaining} payload bytes can hold"),
        });
    }

    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| DatastoreError::Format { reason: format!("non UTF-8 id at byte {}", cur.pos) })?
            .to_owned();
        let raw = cur.take(dim * 4, "vector")?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DatastoreError::NonFinite { id });
        }
        records.push(EmbeddingRecord { id, vector });
    }
    if cur.pos != bytes.len() {
        return Err(DatastoreError::Format {
            reason: format!("{} trailing bytes after {count} records", bytes.len() - cur.pos),
        });
    }
    Ok(EmbeddingFile { dim, records })
}
