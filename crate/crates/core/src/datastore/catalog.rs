use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aemb::{read_embeddings, EmbeddingRecord};
use super::{read_ldj, DatastoreError};
use crate::fusion::{dot, l2_norm, CueSet, UnitVector};

pub const MANIFEST_FILE: &str = "manifest.ldj";
pub const IMAGE_EMBEDDINGS_FILE: &str = "images.aemb";
pub const TEXT_EMBEDDINGS_FILE: &str = "texts.aemb";

/// Candidate pool size used for category-restricted gating.
pub const DEFAULT_POOL_SIZE: usize = 100;

/// Rows this close to unit norm are kept bit-exact.
const KEEP_TOLERANCE: f64 = 1e-5;
/// Rows within this band are renormalized; anything further out is rejected.
const RENORM_TOLERANCE: f64 = 1e-2;

/// One line of a catalog manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub item_id: String,
    pub category: String,
    #[serde(default)]
    pub description: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Item {
    pub item_id: String,
    pub category: String,
    pub description: String,
    pub image_ref: String,
    #[serde(skip)]
    pub text_embedding: Option<UnitVector>,
}

/// An immutable item database with a contiguous image-embedding matrix.
///
/// Row `k` of the matrix is the image embedding of `items()[k]`.
#[derive(Debug, Clone)]
pub struct Catalog {
    dim: usize,
    items: Vec<Item>,
    matrix: Vec<f32>,
    by_id: HashMap<String, usize>,
    categories: BTreeMap<String, Vec<usize>>,
    root: Option<PathBuf>,
}

/// Loads a catalog from a manifest and an image-embedding file.
pub fn load_catalog(
    manifest_path: impl AsRef<Path>,
    embedding_path: impl AsRef<Path>,
) -> Result<Catalog, DatastoreError> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Vec<ManifestRecord> = read_ldj(manifest_path)?;
    let file = read_embeddings(embedding_path)?;
    let mut catalog = Catalog::from_records(file.dim, manifest, file.records, None)?;
    catalog.root = manifest_path.parent().map(Path::to_path_buf);
    Ok(catalog)
}

fn checked_unit(id: &str, mut v: Vec<f32>) -> Result<Vec<f32>, DatastoreError> {
    let norm = l2_norm(&v);
    let drift = (norm - 1.0).abs();
    if drift <= KEEP_TOLERANCE {
        Ok(v)
    } else if drift <= RENORM_TOLERANCE {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
        Ok(v)
    } else {
        Err(DatastoreError::NormOutOfBand { item_id: id.to_string(), norm })
    }
}

impl Catalog {
    /// Loads `manifest.ldj`, `images.aemb` and, if present, `texts.aemb`
    /// from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DatastoreError> {
        let dir = dir.as_ref();
        let manifest: Vec<ManifestRecord> = read_ldj(dir.join(MANIFEST_FILE))?;
        let images = read_embeddings(dir.join(IMAGE_EMBEDDINGS_FILE))?;
        let text_path = dir.join(TEXT_EMBEDDINGS_FILE);
        let texts = if text_path.exists() {
            let f = read_embeddings(&text_path)?;
            if f.dim != images.dim {
                return Err(DatastoreError::DimensionMismatch {
                    context: TEXT_EMBEDDINGS_FILE.to_string(),
                    expected: images.dim,
                    found: f.dim,
                });
            }
            Some(f.records)
        } else {
            None
        };
        let mut catalog = Catalog::from_records(images.dim, manifest, images.records, texts)?;
        catalog.root = Some(dir.to_path_buf());
        Ok(catalog)
    }

    /// Joins manifest records with embedding rows by item id.
    ///
    /// Embedding rows without a manifest entry are ignored. Text embeddings
    /// are optional per item.
    pub fn from_records(
        dim: usize,
        manifest: Vec<ManifestRecord>,
        images: Vec<EmbeddingRecord>,
        texts: Option<Vec<EmbeddingRecord>>,
    ) -> Result<Self, DatastoreError> {
        let mut image_rows: HashMap<String, Vec<f32>> = HashMap::with_capacity(images.len());
        for rec in images {
            if rec.vector.len() != dim {
                return Err(DatastoreError::DimensionMismatch {
                    context: format!("image embedding `{}`", rec.id),
                    expected: dim,
                    found: rec.vector.len(),
                });
            }
            if image_rows.insert(rec.id.clone(), rec.vector).is_some() {
                return Err(DatastoreError::DuplicateItemId(rec.id));
            }
        }
        let mut text_rows: HashMap<String, Vec<f32>> = HashMap::new();
        for rec in texts.into_iter().flatten() {
            if rec.vector.len() != dim {
                return Err(DatastoreError::DimensionMismatch {
                    context: format!("text embedding `{}`", rec.id),
                    expected: dim,
                    found: rec.vector.len(),
                });
            }
            text_rows.insert(rec.id, rec.vector);
        }

        let mut items = Vec::with_capacity(manifest.len());
        let mut matrix = Vec::with_capacity(manifest.len() * dim);
        let mut by_id = HashMap::with_capacity(manifest.len());
        let mut categories: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for rec in manifest {
            if by_id.contains_key(&rec.item_id) {
                return Err(DatastoreError::DuplicateItemId(rec.item_id));
            }
            let row = image_rows
                .remove(&rec.item_id)
                .ok_or_else(|| DatastoreError::MissingEmbedding(rec.item_id.clone()))?;
            matrix.extend(checked_unit(&rec.item_id, row)?);
            let text_embedding = match text_rows.remove(&rec.item_id) {
                Some(v) => Some(
                    UnitVector::try_new(checked_unit(&rec.item_id, v)?)
                        .expect("row was checked to be unit-norm"),
                ),
                None => None,
            };
            let idx = items.len();
            by_id.insert(rec.item_id.clone(), idx);
            categories.entry(rec.category.clone()).or_default().push(idx);
            items.push(Item {
                item_id: rec.item_id,
                category: rec.category,
                description: rec.description,
                image_ref: rec.image_ref,
                text_embedding,
            });
        }
        if !image_rows.is_empty() {
            tracing::debug!(unused = image_rows.len(), "embedding rows without manifest entries ignored");
        }
        Ok(Self { dim, items, matrix, by_id, categories, root: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.by_id.get(item_id).copied()
    }

    pub fn get(&self, item_id: &str) -> Result<(usize, &Item), DatastoreError> {
        self.index_of(item_id)
            .map(|i| (i, &self.items[i]))
            .ok_or_else(|| DatastoreError::UnknownItem(item_id.to_string()))
    }

    /// Image embedding of item `index` (a unit-norm row of the matrix).
    pub fn image_embedding(&self, index: usize) -> &[f32] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn image_unit(&self, index: usize) -> UnitVector {
        UnitVector::try_new(self.image_embedding(index).to_vec()).expect("catalog rows are unit-norm")
    }

    /// The whole row-major embedding matrix.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    /// Item indices of `category`, in catalog order.
    pub fn category_indices(&self, category: &str) -> Result<&[usize], DatastoreError> {
        self.categories
            .get(category)
            .map(Vec::as_slice)
            .ok_or_else(|| DatastoreError::UnknownCategory(category.to_string()))
    }

    /// Directory image references are resolved against, when loaded from disk.
    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = Some(root.into());
        self
    }

    /// Resolves an item's image reference. URLs are returned unchanged.
    pub fn image_location(&self, item: &Item) -> String {
        let r = &item.image_ref;
        if r.contains("://") || Path::new(r).is_absolute() {
            return r.clone();
        }
        match &self.root {
            Some(root) => root.join(r).to_string_lossy().into_owned(),
            None => r.clone(),
        }
    }
}

/// A member of a category candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolMember {
    pub index: usize,
    pub vector: UnitVector,
    pub mean_similarity: f64,
}

/// The `pool_size` items of `category` closest (by mean cosine similarity)
/// to the present cues. Ties are broken by ascending item id.
pub fn candidate_pool(
    catalog: &Catalog,
    category: &str,
    cues: &CueSet,
    pool_size: usize,
) -> Result<Vec<PoolMember>, DatastoreError> {
    if pool_size == 0 {
        return Err(DatastoreError::EmptyPool);
    }
    let members = catalog.category_indices(category)?;
    if members.is_empty() {
        return Err(DatastoreError::EmptyCategory(category.to_string()));
    }
    if cues.dim() != catalog.dim() {
        return Err(DatastoreError::DimensionMismatch {
            context: "cue vectors".into(),
            expected: catalog.dim(),
            found: cues.dim(),
        });
    }
    let present = cues.present();
    let mut scored: Vec<(usize, f64)> = members
        .iter()
        .map(|&idx| {
            let row = catalog.image_embedding(idx);
            let total: f64 = present.iter().map(|(_, v)| dot(v.as_slice(), row)).sum();
            (idx, total / present.len() as f64)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| catalog.item(a.0).item_id.cmp(&catalog.item(b.0).item_id))
    });
    scored.truncate(pool_size);
    Ok(scored
        .into_iter()
        .map(|(index, mean_similarity)| PoolMember {
            index,
            vector: catalog.image_unit(index),
            mean_similarity,
        })
        .collect())
}
