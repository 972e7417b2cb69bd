//! Exact cosine-similarity retrieval over a [`Catalog`].
//!
//! Queries and catalog rows are unit-norm, so the dot product is the cosine.
//! Ranking order is total: score descending, then item id ascending. The scan
//! is split into row blocks across the rayon pool; because the order is total
//! the merged result does not depend on the number of threads.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{Catalog, DatastoreError};
use crate::fusion::{dot, UnitVector};

const BLOCK_ROWS: usize = 2048;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("nothing to search: catalog (after filtering) is empty")]
    EmptyCatalog,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("query has dimension {found}, catalog has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub index: usize,
    pub score: f64,
}

/// Items in ranking order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub items: Vec<RankedItem>,
}

impl RankedResult {
    pub fn position_of(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|r| r.item_id == item_id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|r| r.item_id.as_str()).collect()
    }
}

/// The ranking order: higher score first, then ascending item id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn top_k_of(catalog: &Catalog, mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        rank_order((a.1, &catalog.item(a.0).item_id), (b.1, &catalog.item(b.0).item_id))
    };
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
}

/// Exact top-`k` search, optionally restricted to one category.
pub fn retrieve_top_k(
    q: &UnitVector,
    catalog: &Catalog,
    k: usize,
    category: Option<&str>,
) -> Result<RankedResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if q.dim() != catalog.dim() {
        return Err(RetrievalError::DimensionMismatch { expected: catalog.dim(), found: q.dim() });
    }
    let query = q.as_slice();
    let top = match category {
        Some(cat) => {
            let members = catalog.category_indices(cat).map_err(|e| match e {
                DatastoreError::UnknownCategory(c) => RetrievalError::UnknownCategory(c),
                _ => RetrievalError::EmptyCatalog,
            })?;
            if members.is_empty() {
                return Err(RetrievalError::EmptyCatalog);
            }
            let partials: Vec<Vec<(usize, f64)>> = members
                .par_chunks(BLOCK_ROWS)
                .map(|block| {
                    let scored =
                        block.iter().map(|&i| (i, dot(query, catalog.image_embedding(i)))).collect();
                    top_k_of(catalog, scored, k)
                })
                .collect();
            top_k_of(catalog, partials.into_iter().flatten().collect(), k)
        }
        None => {
            if catalog.is_empty() {
                return Err(RetrievalError::EmptyCatalog);
            }
            let dim = catalog.dim();
            let partials: Vec<Vec<(usize, f64)>> = catalog
                .matrix()
                .par_chunks(BLOCK_ROWS * dim)
                .enumerate()
                .map(|(b, rows)| {
                    let base = b * BLOCK_ROWS;
                    let scored = rows
                        .chunks_exact(dim)
                        .enumerate()
                        .map(|(j, row)| (base + j, dot(query, row)))
                        .collect();
                    top_k_of(catalog, scored, k)
                })
                .collect();
            top_k_of(catalog, partials.into_iter().flatten().collect(), k)
        }
    };
    Ok(RankedResult {
        items: top
            .into_iter()
            .map(|(index, score)| RankedItem {
                item_id: catalog.item(index).item_id.clone(),
                index,
                score,
            })
            .collect(),
    })
}

/// Scores for a fill-in-the-blank question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitbScores {
    pub scores: Vec<f64>,
    /// Index (into the candidate list) of the chosen candidate.
    pub best: usize,
}

/// Cosine scores of `candidates` (id, image embedding) against `q`; the
/// highest score wins and ties go to the smaller item id.
pub fn score_fitb(q: &UnitVector, candidates: &[(&str, &[f32])]) -> Result<FitbScores, RetrievalError> {
    if candidates.len() < 2 {
        return Err(RetrievalError::TooFewCandidates(candidates.len()));
    }
    if let Some((_, v)) = candidates.iter().find(|(_, v)| v.len() != q.dim()) {
        return Err(RetrievalError::DimensionMismatch { expected: q.dim(), found: v.len() });
    }
    let scores: Vec<f64> = candidates.iter().map(|(_, v)| q.dot(v)).collect();
    let best = (0..candidates.len())
        .min_by(|&a, &b| rank_order((scores[a], candidates[a].0), (scores[b], candidates[b].0)))
        .expect("at least two candidates");
    Ok(FitbScores { scores, best })
}
