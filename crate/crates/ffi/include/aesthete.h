#ifndef AESTHETE_H
#define AESTHETE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  AESTHETE_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  AESTHETE_STATUS_NULL_POINTER = 1,
  /**
   * An argument is out of range or malformed (bad UTF-8, zero k, ...).
   */
  AESTHETE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Vector lengths disagree.
   */
  AESTHETE_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Catalog files are missing, unreadable or malformed.
   */
  AESTHETE_STATUS_DATASTORE = 4,
  /**
   * Fusion rejected its inputs (zero vector, non-finite value, ...).
   */
  AESTHETE_STATUS_FUSION = 5,
  /**
   * The category is unknown.
   */
  AESTHETE_STATUS_UNKNOWN_CATEGORY = 6,
  /**
   * The output buffer is too small; the required size was written.
   */
  AESTHETE_STATUS_BUFFER_TOO_SMALL = 7,
  AESTHETE_STATUS_PANIC = 99,
} AestheteStatus;

/**
 * Attribute tags, in the engine's canonical order.
 */
typedef enum {
  AESTHETE_ATTRIBUTE_COLOR = 0,
  AESTHETE_ATTRIBUTE_STYLE = 1,
  AESTHETE_ATTRIBUTE_OCCASION = 2,
  AESTHETE_ATTRIBUTE_SEASON = 3,
  AESTHETE_ATTRIBUTE_MATERIAL = 4,
  AESTHETE_ATTRIBUTE_BALANCE = 5,
} AestheteAttribute;

/**
 * Loaded catalog.
 */
typedef struct AestheteCatalog AestheteCatalog;

/**
 * Fusion settings. Obtain defaults from [`aesthete_fusion_config_default`].
 */
typedef struct {
  /**
   * Saliency softmax temperature (> 0).
   */
  double tau;
  /**
   * +1 or -1: sign of the attribute weighting exponent.
   */
  int32_t aava_sign;
  /**
   * Softmax temperature of the gating distributions (> 0).
   */
  double entropy_temperature;
  /**
   * When false the query is the target text embedding alone.
   */
  bool fusion_enabled;
  /**
   * When false attribute vectors are ignored.
   */
  bool aesthetic_thoughts;
} AestheteFusionConfig;

/**
 * Per-cue gates of a fused query. Absent cues have gate 0.
 */
typedef struct {
  double visual;
  double text;
  double aesthetic;
} AestheteGates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *aesthete_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aesthete_version(void);

AestheteFusionConfig aesthete_fusion_config_default(void);

/**
 * Loads a catalog directory (`manifest.ldj` + `images.aemb`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
AestheteStatus aesthete_catalog_load(const char *dir, AestheteCatalog **out);

/**
 * Releases a catalog. Null is ignored.
 *
 * # Safety
 * `catalog` must come from [`aesthete_catalog_load`] and not be used again.
 */
void aesthete_catalog_free(AestheteCatalog *catalog);

/**
 * Number of items, or 0 for null.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
size_t aesthete_catalog_len(const AestheteCatalog *catalog);

/**
 * Embedding dimension, or 0 for null.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
size_t aesthete_catalog_dim(const AestheteCatalog *catalog);

/**
 * Item id of row `index`, or null when out of range. Owned by the catalog.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
const char *aesthete_catalog_item_id(const AestheteCatalog *catalog, size_t index);

/**
 * Category of row `index`, or null when out of range. Owned by the catalog.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
const char *aesthete_catalog_item_category(const AestheteCatalog *catalog, size_t index);

/**
 * Row index of `item_id` written to `out_index`.
 *
 * # Safety
 * `catalog` must be a live handle, `item_id` NUL-terminated, `out_index` writable.
 */
AestheteStatus aesthete_catalog_index_of(const AestheteCatalog *catalog,
                                         const char *item_id,
                                         size_t *out_index);

/**
 * Copies the unit image embedding of row `index` into `out` (`dim` floats).
 *
 * # Safety
 * `catalog` must be a live handle and `out` hold `dim` floats.
 */
AestheteStatus aesthete_catalog_embedding(const AestheteCatalog *catalog, size_t index, float *out);

/**
 * Fuses one query.
 *
 * Inputs are raw (they are normalized here): `outfit` holds `n_outfit`
 * vectors, `target` one, `attributes` holds `n_attributes` vectors tagged
 * by `attribute_tags` (no repeats), `candidates` holds `n_candidates`
 * vectors used for gating. Writes the unit query to `out_query` (`dim`
 * floats) and, when `out_gates` is non-null, the cue gates.
 *
 * # Safety
 * Every buffer must hold the number of values stated above.
 */
AestheteStatus aesthete_build_query(size_t dim,
                                    const float *outfit,
                                    size_t n_outfit,
                                    const float *target,
                                    const float *attributes,
                                    const AestheteAttribute *attribute_tags,
                                    size_t n_attributes,
                                    const float *candidates,
                                    size_t n_candidates,
                                    const AestheteFusionConfig *config,
                                    float *out_query,
                                    AestheteGates *out_gates);

/**
 * Exact top-`k` search for `query` (`dim` floats, normalized here),
 * optionally within `category` (null for the whole catalog). Results are
 * ordered by score, ties by item id. Writes up to `capacity` row indices
 * and scores and the number of results to `out_count`.
 *
 * # Safety
 * `catalog` must be a live handle; `out_indices` and `out_scores` must hold
 * `capacity` values; `category` must be null or NUL-terminated.
 */
AestheteStatus aesthete_retrieve_top_k(const AestheteCatalog *catalog,
                                       const float *query,
                                       size_t dim,
                                       size_t k,
                                       const char *category,
                                       size_t *out_indices,
                                       double *out_scores,
                                       size_t capacity,
                                       size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AESTHETE_H */
