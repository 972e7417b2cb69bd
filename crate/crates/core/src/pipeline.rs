//! End-to-end composition: reasoning, text embedding, fusion and retrieval
//! over one catalog.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute::AestheticAttribute;
use crate::datastore::{candidate_pool, Catalog, DatastoreError, FitbQuestion, DEFAULT_POOL_SIZE};
use crate::embedder::{embed_unit, EmbedError, TextEmbedder};
use crate::fusion::{
    fuse_prepared, prepare_cues, AavaSign, FusionConfig, FusionError, QueryVector, UnitVector,
    DEFAULT_ENTROPY_TEMPERATURE, DEFAULT_TAU,
};
use crate::reasoning::{
    prepare, reason_cached, CacheMode, CachedReasoning, Digest32, ImageSource, Mllm, MllmConfig, PromptVariant,
    ReasoningError, ReasoningRecord, ReasoningRequest, TaskInput, TranscriptCache,
};
use crate::retrieval::{retrieve_top_k, score_fitb, RankedResult, RetrievalError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// The switches and constants of one pipeline variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Row label in reports.
    pub name: String,
    pub identify_step: bool,
    pub svaf_enabled: bool,
    pub aesthetic_thoughts: bool,
    pub tau: f64,
    pub aava_sign: AavaSign,
    pub entropy_temperature: f64,
    pub pool_size: usize,
    pub model: String,
    pub mode: CacheMode,
    /// Restrict CIR retrieval to the target category.
    pub restrict_to_category: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            name: "full".into(),
            identify_step: true,
            svaf_enabled: true,
            aesthetic_thoughts: true,
            tau: DEFAULT_TAU,
            aava_sign: AavaSign::Positive,
            entropy_temperature: DEFAULT_ENTROPY_TEMPERATURE,
            pool_size: DEFAULT_POOL_SIZE,
            model: MllmConfig::default().model,
            mode: CacheMode::Live,
            restrict_to_category: true,
        }
    }
}

impl PipelineConfig {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn prompt_variant(&self) -> PromptVariant {
        PromptVariant { identify: self.identify_step, aesthetic_thoughts: self.aesthetic_thoughts }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            tau: self.tau,
            aava_sign: self.aava_sign,
            entropy_temperature: self.entropy_temperature,
            svaf_enabled: self.svaf_enabled,
            aesthetic_thoughts: self.aesthetic_thoughts,
        }
    }

    /// The four rows of the component ablation: full, identify step off,
    /// fusion off, fusion and aesthetic thoughts off.
    pub fn ablation_grid(base: &PipelineConfig) -> Vec<PipelineConfig> {
        vec![
            PipelineConfig { identify_step: false, ..base.clone() }.named("ide-off"),
            PipelineConfig { svaf_enabled: false, ..base.clone() }.named("svaf-off"),
            PipelineConfig { svaf_enabled: false, aesthetic_thoughts: false, ..base.clone() }.named("svaf-aes-off"),
            base.clone().named("full"),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.entropy_temperature > 0.0 && self.entropy_temperature.is_finite()) {
            return Err(format!("entropy_temperature must be > 0, got {}", self.entropy_temperature));
        }
        if self.pool_size == 0 {
            return Err("pool_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Text cues derived from a reasoning record.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCues {
    pub target: UnitVector,
    pub attributes: Option<BTreeMap<AestheticAttribute, UnitVector>>,
}

#[derive(Debug, Clone)]
pub struct FitbAnswer {
    pub chosen: usize,
    pub scores: Vec<f64>,
    pub query: QueryVector,
    pub reasoning: CachedReasoning,
}

#[derive(Debug, Clone)]
pub struct Recommendation {
    pub ranked: RankedResult,
    pub query: QueryVector,
    pub reasoning: CachedReasoning,
}

/// What the reasoning step is asked about, in catalog terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReasoningTask {
    Fitb { candidate_item_ids: Vec<String> },
    Cir { category: String },
}

/// Shared, immutable engine state. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    catalog: Arc<Catalog>,
    embedder: Arc<dyn TextEmbedder>,
    mllm: Option<Arc<dyn Mllm>>,
    mllm_config: MllmConfig,
    cache_root: PathBuf,
}

impl Engine {
    pub fn new(
        catalog: Arc<Catalog>,
        embedder: Arc<dyn TextEmbedder>,
        mllm: Option<Arc<dyn Mllm>>,
        mllm_config: MllmConfig,
        cache_root: impl Into<PathBuf>,
    ) -> Self {
        Self { catalog, embedder, mllm, mllm_config, cache_root: cache_root.into() }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn catalog_arc(&self) -> Arc<Catalog> {
        self.catalog.clone()
    }

    pub fn embedder(&self) -> &dyn TextEmbedder {
        self.embedder.as_ref()
    }

    pub fn mllm(&self) -> Option<&dyn Mllm> {
        self.mllm.as_deref()
    }

    pub fn mllm_config(&self) -> &MllmConfig {
        &self.mllm_config
    }

    pub fn cache(&self, mode: CacheMode) -> TranscriptCache {
        TranscriptCache::new(&self.cache_root, mode)
    }

    fn images_of(&self, ids: &[String]) -> Result<Vec<ImageSource>, EngineError> {
        ids.iter()
            .map(|id| {
                let (_, item) = self.catalog.get(id)?;
                Ok(ImageSource::from_location(&self.catalog.image_location(item)))
            })
            .collect()
    }

    fn model_config(&self, cfg: &PipelineConfig) -> MllmConfig {
        MllmConfig { model: cfg.model.clone(), ..self.mllm_config.clone() }
    }

    pub fn reasoning_request(&self, outfit_ids: &[String], task: &ReasoningTask, cfg: &PipelineConfig) -> Result<ReasoningRequest, EngineError> {
        let task = match task {
            ReasoningTask::Fitb { candidate_item_ids } => TaskInput::Fitb { candidates: self.images_of(candidate_item_ids)? },
            ReasoningTask::Cir { category } => TaskInput::Cir { category: category.clone() },
        };
        Ok(ReasoningRequest { outfit_images: self.images_of(outfit_ids)?, task, variant: cfg.prompt_variant() })
    }

    /// Cache key the request would use, without calling the model.
    pub fn reasoning_key(&self, outfit_ids: &[String], task: &ReasoningTask, cfg: &PipelineConfig) -> Result<Digest32, EngineError> {
        let request = self.reasoning_request(outfit_ids, task, cfg)?;
        Ok(prepare(&request, &self.model_config(cfg))?.1)
    }

    pub fn reason(&self, outfit_ids: &[String], task: &ReasoningTask, cfg: &PipelineConfig) -> Result<CachedReasoning, EngineError> {
        let request = self.reasoning_request(outfit_ids, task, cfg)?;
        let cache = self.cache(cfg.mode);
        Ok(reason_cached(&request, self.mllm.as_deref(), &self.model_config(cfg), &cache)?)
    }

    /// Embeds the target description and, when aesthetic thoughts are on,
    /// every completed attribute thought.
    pub fn text_cues(&self, record: &ReasoningRecord, cfg: &PipelineConfig) -> Result<TextCues, EngineError> {
        let mut texts = vec![record.target_description.clone()];
        let attrs: Vec<AestheticAttribute> = if cfg.aesthetic_thoughts {
            record.profile.thoughts.keys().copied().collect()
        } else {
            Vec::new()
        };
        texts.extend(attrs.iter().map(|a| record.profile.thoughts[a].embedding_text()));
        let mut vectors = embed_unit(self.embedder.as_ref(), &texts, self.catalog.dim())?.into_iter();
        let target = vectors.next().expect("target text embedded");
        let attributes = if cfg.aesthetic_thoughts && !attrs.is_empty() {
            Some(attrs.into_iter().zip(vectors).collect())
        } else {
            None
        };
        Ok(TextCues { target, attributes })
    }

    fn outfit_vectors(&self, ids: &[String]) -> Result<Vec<UnitVector>, EngineError> {
        ids.iter()
            .map(|id| Ok(self.catalog.image_unit(self.catalog.get(id)?.0)))
            .collect()
    }

    /// Answers a fill-in-the-blank question; the candidates are also the
    /// gating set.
    pub fn answer_fitb(&self, q: &FitbQuestion, cfg: &PipelineConfig) -> Result<FitbAnswer, EngineError> {
        q.validate_against(&self.catalog)?;
        let task = ReasoningTask::Fitb { candidate_item_ids: q.candidate_item_ids.clone() };
        let reasoning = self.reason(&q.outfit_item_ids, &task, cfg)?;
        let cues = self.text_cues(&reasoning.record, cfg)?;
        let outfit = self.outfit_vectors(&q.outfit_item_ids)?;
        let candidates = self.outfit_vectors(&q.candidate_item_ids)?;

        let fusion = cfg.fusion_config();
        let query = if cfg.svaf_enabled {
            let prepared = prepare_cues(&outfit, &cues.target, cues.attributes.as_ref(), &fusion)?;
            fuse_prepared(prepared, &candidates, &fusion)?
        } else {
            QueryVector::text_only(cues.target)
        };
        let pairs: Vec<(&str, &[f32])> = q
            .candidate_item_ids
            .iter()
            .zip(&candidates)
            .map(|(id, v)| (id.as_str(), v.as_slice()))
            .collect();
        let scored = score_fitb(&query.q, &pairs)?;
        Ok(FitbAnswer { chosen: scored.best, scores: scored.scores, query, reasoning })
    }

    /// Completes a partial outfit with the top-`k` items of `category`.
    ///
    /// The gating set is the category candidate pool ranked by the cues.
    pub fn complete_outfit(
        &self,
        outfit_ids: &[String],
        category: &str,
        k: usize,
        cfg: &PipelineConfig,
    ) -> Result<Recommendation, EngineError> {
        if outfit_ids.is_empty() {
            return Err(FusionError::EmptyOutfit.into());
        }
        let outfit = self.outfit_vectors(outfit_ids)?;
        self.catalog.category_indices(category)?;
        let task = ReasoningTask::Cir { category: category.to_string() };
        let reasoning = self.reason(outfit_ids, &task, cfg)?;
        let cues = self.text_cues(&reasoning.record, cfg)?;

        let fusion = cfg.fusion_config();
        let query = if cfg.svaf_enabled {
            let prepared = prepare_cues(&outfit, &cues.target, cues.attributes.as_ref(), &fusion)?;
            let pool = candidate_pool(&self.catalog, category, &prepared.cues, cfg.pool_size)?;
            let pool_vectors: Vec<&[f32]> = pool.iter().map(|m| m.vector.as_slice()).collect();
            fuse_prepared(prepared, &pool_vectors, &fusion)?
        } else {
            QueryVector::text_only(cues.target)
        };
        let filter = cfg.restrict_to_category.then_some(category);
        let ranked = retrieve_top_k(&query.q, &self.catalog, k, filter)?;
        Ok(Recommendation { ranked, query, reasoning })
    }
}
