//! C ABI over the engine's deterministic parts: catalog loading, query fusion
//! and exact top-k retrieval.
//!
//! Conventions:
//! - every fallible function returns an [`AestheteStatus`]; on failure a
//!   message is available from [`aesthete_last_error`] on the same thread;
//! - handles are opaque and owned by the caller once returned, and must be
//!   released with the matching `_free` function;
//! - vectors are passed as row-major `float` buffers of `count * dim` values;
//! - no panic crosses the boundary (reported as `AESTHETE_STATUS_PANIC`).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use aesthete::attribute::AestheticAttribute;
use aesthete::datastore::{Catalog, DatastoreError};
use aesthete::fusion::{build_query, normalize, AavaSign, Cue, FusionConfig, FusionError, UnitVector};
use aesthete::retrieval::{retrieve_top_k, RetrievalError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AestheteStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument is out of range or malformed (bad UTF-8, zero k, ...).
    InvalidArgument = 2,
    /// Vector lengths disagree.
    DimensionMismatch = 3,
    /// Catalog files are missing, unreadable or malformed.
    Datastore = 4,
    /// Fusion rejected its inputs (zero vector, non-finite value, ...).
    Fusion = 5,
    /// The category is unknown.
    UnknownCategory = 6,
    /// The output buffer is too small; the required size was written.
    BufferTooSmall = 7,
    Panic = 99,
}

/// Attribute tags, in the engine's canonical order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AestheteAttribute {
    Color = 0,
    Style = 1,
    Occasion = 2,
    Season = 3,
    Material = 4,
    Balance = 5,
}

/// Fusion settings. Obtain defaults from [`aesthete_fusion_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AestheteFusionConfig {
    /// Saliency softmax temperature (> 0).
    pub tau: f64,
    /// +1 or -1: sign of the attribute weighting exponent.
    pub aava_sign: i32,
    /// Softmax temperature of the gating distributions (> 0).
    pub entropy_temperature: f64,
    /// When false the query is the target text embedding alone.
    pub fusion_enabled: bool,
    /// When false attribute vectors are ignored.
    pub aesthetic_thoughts: bool,
}

/// Per-cue gates of a fused query. Absent cues have gate 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AestheteGates {
    pub visual: f64,
    pub text: f64,
    pub aesthetic: f64,
}

/// Loaded catalog.
pub struct AestheteCatalog {
    catalog: Catalog,
    ids: Vec<CString>,
    categories: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let msg = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(AestheteStatus, String);

impl Failure {
    fn new(status: AestheteStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        let status = match e {
            FusionError::DimensionMismatch { .. } => AestheteStatus::DimensionMismatch,
            _ => AestheteStatus::Fusion,
        };
        Self(status, e.to_string())
    }
}

impl From<DatastoreError> for Failure {
    fn from(e: DatastoreError) -> Self {
        Self(AestheteStatus::Datastore, e.to_string())
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        let status = match e {
            RetrievalError::InvalidK => AestheteStatus::InvalidArgument,
            RetrievalError::DimensionMismatch { .. } => AestheteStatus::DimensionMismatch,
            RetrievalError::UnknownCategory(_) | RetrievalError::EmptyCatalog => AestheteStatus::UnknownCategory,
            RetrievalError::TooFewCandidates(_) => AestheteStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

/// Runs `f`, converting failures and panics into a status plus last-error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AestheteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AestheteStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AestheteStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(AestheteStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn utf8<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AestheteStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// `count` unit vectors of `dim` floats read from `data`.
unsafe fn units(data: *const f32, count: usize, dim: usize, name: &str) -> Result<Vec<UnitVector>, Failure> {
    if count == 0 {
        return Ok(Vec::new());
    }
    non_null(data, name)?;
    let len = count
        .checked_mul(dim)
        .ok_or_else(|| Failure::new(AestheteStatus::InvalidArgument, format!("{name}: size overflow")))?;
    let values = std::slice::from_raw_parts(data, len);
    values
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, row)| normalize(row).map_err(|e| Failure::new(AestheteStatus::Fusion, format!("{name}[{i}]: {e}"))))
        .collect()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn aesthete_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aesthete_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn aesthete_fusion_config_default() -> AestheteFusionConfig {
    let d = FusionConfig::default();
    AestheteFusionConfig {
        tau: d.tau,
        aava_sign: d.aava_sign.factor() as i32,
        entropy_temperature: d.entropy_temperature,
        fusion_enabled: d.svaf_enabled,
        aesthetic_thoughts: d.aesthetic_thoughts,
    }
}

/// Loads a catalog directory (`manifest.ldj` + `images.aemb`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_load(dir: *const c_char, out: *mut *mut AestheteCatalog) -> AestheteStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = PathBuf::from(utf8(dir, "dir")?);
        let catalog = Catalog::load_dir(&dir)?;
        let cstr = |s: &str| CString::new(s).map_err(|_| Failure::new(AestheteStatus::Datastore, "NUL byte in catalog text"));
        let ids = catalog.items().iter().map(|it| cstr(&it.item_id)).collect::<Result<_, _>>()?;
        let categories = catalog.items().iter().map(|it| cstr(&it.category)).collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(AestheteCatalog { catalog, ids, categories }));
        Ok(())
    })
}

/// Releases a catalog. Null is ignored.
///
/// # Safety
/// `catalog` must come from [`aesthete_catalog_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_free(catalog: *mut AestheteCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Number of items, or 0 for null.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_len(catalog: *const AestheteCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.catalog.len())
}

/// Embedding dimension, or 0 for null.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_dim(catalog: *const AestheteCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.catalog.dim())
}

/// Item id of row `index`, or null when out of range. Owned by the catalog.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_item_id(catalog: *const AestheteCatalog, index: usize) -> *const c_char {
    catalog.as_ref().and_then(|c| c.ids.get(index)).map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Category of row `index`, or null when out of range. Owned by the catalog.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_item_category(catalog: *const AestheteCatalog, index: usize) -> *const c_char {
    catalog.as_ref().and_then(|c| c.categories.get(index)).map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Row index of `item_id` written to `out_index`.
///
/// # Safety
/// `catalog` must be a live handle, `item_id` NUL-terminated, `out_index` writable.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_index_of(
    catalog: *const AestheteCatalog,
    item_id: *const c_char,
    out_index: *mut usize,
) -> AestheteStatus {
    guard(|| {
        non_null(catalog, "catalog")?;
        non_null(out_index, "out_index")?;
        let id = utf8(item_id, "item_id")?;
        let (index, _) = (*catalog).catalog.get(id)?;
        *out_index = index;
        Ok(())
    })
}

/// Copies the unit image embedding of row `index` into `out` (`dim` floats).
///
/// # Safety
/// `catalog` must be a live handle and `out` hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn aesthete_catalog_embedding(
    catalog: *const AestheteCatalog,
    index: usize,
    out: *mut f32,
) -> AestheteStatus {
    guard(|| {
        non_null(catalog, "catalog")?;
        non_null(out, "out")?;
        let c = &(*catalog).catalog;
        if index >= c.len() {
            return Err(Failure::new(AestheteStatus::InvalidArgument, format!("index {index} out of range")));
        }
        std::ptr::copy_nonoverlapping(c.image_embedding(index).as_ptr(), out, c.dim());
        Ok(())
    })
}

/// Fuses one query.
///
/// Inputs are raw (they are normalized here): `outfit` holds `n_outfit`
/// vectors, `target` one, `attributes` holds `n_attributes` vectors tagged
/// by `attribute_tags` (no repeats), `candidates` holds `n_candidates`
/// vectors used for gating. Writes the unit query to `out_query` (`dim`
/// floats) and, when `out_gates` is non-null, the cue gates.
///
/// # Safety
/// Every buffer must hold the number of values stated above.
#[no_mangle]
pub unsafe extern "C" fn aesthete_build_query(
    dim: usize,
    outfit: *const f32,
    n_outfit: usize,
    target: *const f32,
    attributes: *const f32,
    attribute_tags: *const AestheteAttribute,
    n_attributes: usize,
    candidates: *const f32,
    n_candidates: usize,
    config: *const AestheteFusionConfig,
    out_query: *mut f32,
    out_gates: *mut AestheteGates,
) -> AestheteStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out_query, "out_query")?;
        if dim == 0 {
            return Err(Failure::new(AestheteStatus::InvalidArgument, "dim must be >= 1"));
        }
        let cfg = *config;
        let sign = match cfg.aava_sign {
            1 => AavaSign::Positive,
            -1 => AavaSign::Negative,
            s => return Err(Failure::new(AestheteStatus::InvalidArgument, format!("aava_sign must be +1 or -1, got {s}"))),
        };
        let outfit = units(outfit, n_outfit, dim, "outfit")?;
        let target = units(target, 1, dim, "target")?.remove(0);
        let attr_vectors = units(attributes, n_attributes, dim, "attributes")?;
        let mut attrs = BTreeMap::new();
        if n_attributes > 0 {
            non_null(attribute_tags, "attribute_tags")?;
            for (i, v) in attr_vectors.into_iter().enumerate() {
                let raw = *attribute_tags.add(i).cast::<i32>();
                if !(0..6).contains(&raw) {
                    return Err(Failure::new(AestheteStatus::InvalidArgument, format!("attribute_tags[{i}] = {raw}")));
                }
                let tag = AestheticAttribute::ALL[raw as usize];
                if attrs.insert(tag, v).is_some() {
                    return Err(Failure::new(AestheteStatus::InvalidArgument, format!("attribute {tag} given twice")));
                }
            }
        }
        let candidates = units(candidates, n_candidates, dim, "candidates")?;
        let fusion = FusionConfig {
            tau: cfg.tau,
            aava_sign: sign,
            entropy_temperature: cfg.entropy_temperature,
            svaf_enabled: cfg.fusion_enabled,
            aesthetic_thoughts: cfg.aesthetic_thoughts,
        };
        let q = build_query(&outfit, &target, Some(&attrs), &candidates, &fusion)?;
        std::ptr::copy_nonoverlapping(q.q.as_slice().as_ptr(), out_query, dim);
        if let Some(g) = out_gates.as_mut() {
            let gate = |c| q.diagnostics.gates.get(&c).copied().unwrap_or(0.0);
            *g = AestheteGates { visual: gate(Cue::Visual), text: gate(Cue::Text), aesthetic: gate(Cue::Aesthetic) };
        }
        Ok(())
    })
}

/// Exact top-`k` search for `query` (`dim` floats, normalized here),
/// optionally within `category` (null for the whole catalog). Results are
/// ordered by score, ties by item id. Writes up to `capacity` row indices
/// and scores and the number of results to `out_count`.
///
/// # Safety
/// `catalog` must be a live handle; `out_indices` and `out_scores` must hold
/// `capacity` values; `category` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn aesthete_retrieve_top_k(
    catalog: *const AestheteCatalog,
    query: *const f32,
    dim: usize,
    k: usize,
    category: *const c_char,
    out_indices: *mut usize,
    out_scores: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> AestheteStatus {
    guard(|| {
        non_null(catalog, "catalog")?;
        non_null(out_count, "out_count")?;
        let c = &(*catalog).catalog;
        if dim != c.dim() {
            return Err(Failure::new(
                AestheteStatus::DimensionMismatch,
                format!("query has dimension {dim}, catalog {}", c.dim()),
            ));
        }
        let q = units(query, 1, dim, "query")?.remove(0);
        let category = if category.is_null() { None } else { Some(utf8(category, "category")?) };
        let ranked = retrieve_top_k(&q, c, k, category)?;
        *out_count = ranked.items.len();
        if ranked.items.len() > capacity {
            return Err(Failure::new(
                AestheteStatus::BufferTooSmall,
                format!("{} results, capacity {capacity}", ranked.items.len()),
            ));
        }
        if !ranked.items.is_empty() {
            non_null(out_indices, "out_indices")?;
            non_null(out_scores, "out_scores")?;
        }
        for (i, r) in ranked.items.iter().enumerate() {
            *out_indices.add(i) = r.index;
            *out_scores.add(i) = r.score;
        }
        Ok(())
    })
}
