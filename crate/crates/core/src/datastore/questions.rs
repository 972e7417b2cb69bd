//! Benchmark question sets (FITB, CIR, A100-style), one JSON object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_ldj, Catalog, DatastoreError};
use crate::attribute::AestheticAttribute;

const VOTE_SHARE_TOLERANCE: f64 = 1e-6;

fn invalid(id: &str, reason: impl Into<String>) -> DatastoreError {
    DatastoreError::InvalidQuestion { id: id.to_string(), reason: reason.into() }
}

fn check_items(catalog: &Catalog, ids: &[String]) -> Result<(), DatastoreError> {
    for id in ids {
        catalog.get(id)?;
    }
    Ok(())
}

/// Fill-in-the-blank: pick the missing item from a small candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbQuestion {
    pub question_id: String,
    pub outfit_item_ids: Vec<String>,
    pub candidate_item_ids: Vec<String>,
    pub answer_index: usize,
}

impl FitbQuestion {
    pub fn validate(&self) -> Result<(), DatastoreError> {
        if self.outfit_item_ids.is_empty() {
            return Err(invalid(&self.question_id, "outfit is empty"));
        }
        if self.candidate_item_ids.len() < 2 {
            return Err(invalid(&self.question_id, "needs at least 2 candidates"));
        }
        if self.answer_index >= self.candidate_item_ids.len() {
            return Err(invalid(&self.question_id, "answer_index out of candidate range"));
        }
        Ok(())
    }

    pub fn validate_against(&self, catalog: &Catalog) -> Result<(), DatastoreError> {
        self.validate()?;
        check_items(catalog, &self.outfit_item_ids)?;
        check_items(catalog, &self.candidate_item_ids)
    }
}

/// Complementary item retrieval: find the missing item of a category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CirQuery {
    pub query_id: String,
    pub outfit_item_ids: Vec<String>,
    pub target_category: String,
    pub ground_truth_item_id: String,
}

impl CirQuery {
    pub fn validate(&self) -> Result<(), DatastoreError> {
        if self.outfit_item_ids.is_empty() {
            return Err(invalid(&self.query_id, "outfit is empty"));
        }
        if self.target_category.trim().is_empty() {
            return Err(invalid(&self.query_id, "target_category is empty"));
        }
        Ok(())
    }

    pub fn validate_against(&self, catalog: &Catalog) -> Result<(), DatastoreError> {
        self.validate()?;
        check_items(catalog, &self.outfit_item_ids)?;
        let (_, truth) = catalog.get(&self.ground_truth_item_id)?;
        if truth.category != self.target_category {
            return Err(invalid(
                &self.query_id,
                format!(
                    "ground truth `{}` has category `{}`, not `{}`",
                    truth.item_id, truth.category, self.target_category
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Crowd-consensus test, scored hard and soft (vote shares).
    Lat,
    /// Expert test, scored per aesthetic attribute.
    Aat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A100Question {
    pub question_id: String,
    pub test_kind: TestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_tag: Option<AestheticAttribute>,
    pub outfit_item_ids: Vec<String>,
    pub candidate_item_ids: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_shares: Option<Vec<f64>>,
}

impl A100Question {
    /// Structural checks. Missing vote shares / attribute tags are reported
    /// by the evaluator with dedicated errors, not here.
    pub fn validate(&self) -> Result<(), DatastoreError> {
        let id = &self.question_id;
        if self.outfit_item_ids.is_empty() {
            return Err(invalid(id, "outfit is empty"));
        }
        if self.candidate_item_ids.len() < 2 {
            return Err(invalid(id, "needs at least 2 candidates"));
        }
        if self.answer_index >= self.candidate_item_ids.len() {
            return Err(invalid(id, "answer_index out of candidate range"));
        }
        if let Some(shares) = &self.vote_shares {
            if shares.len() != self.candidate_item_ids.len() {
                return Err(invalid(id, "vote_shares length differs from candidate count"));
            }
            if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(invalid(id, "vote_shares must be finite and non-negative"));
            }
            let total: f64 = shares.iter().sum();
            if (total - 1.0).abs() > VOTE_SHARE_TOLERANCE {
                return Err(invalid(id, format!("vote_shares sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn validate_against(&self, catalog: &Catalog) -> Result<(), DatastoreError> {
        self.validate()?;
        check_items(catalog, &self.outfit_item_ids)?;
        check_items(catalog, &self.candidate_item_ids)
    }

    /// View as a plain FITB question (same outfit, candidates and answer).
    pub fn as_fitb(&self) -> FitbQuestion {
        FitbQuestion {
            question_id: self.question_id.clone(),
            outfit_item_ids: self.outfit_item_ids.clone(),
            candidate_item_ids: self.candidate_item_ids.clone(),
            answer_index: self.answer_index,
        }
    }
}

/// Any of the three question kinds, loaded from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum QuestionSet {
    Fitb(Vec<FitbQuestion>),
    Cir(Vec<CirQuery>),
    A100(Vec<A100Question>),
}

impl QuestionSet {
    pub fn load_fitb(path: impl AsRef<Path>) -> Result<Vec<FitbQuestion>, DatastoreError> {
        let qs: Vec<FitbQuestion> = read_ldj(path)?;
        qs.iter().try_for_each(FitbQuestion::validate)?;
        Ok(qs)
    }

    pub fn load_cir(path: impl AsRef<Path>) -> Result<Vec<CirQuery>, DatastoreError> {
        let qs: Vec<CirQuery> = read_ldj(path)?;
        qs.iter().try_for_each(CirQuery::validate)?;
        Ok(qs)
    }

    pub fn load_a100(path: impl AsRef<Path>) -> Result<Vec<A100Question>, DatastoreError> {
        let qs: Vec<A100Question> = read_ldj(path)?;
        qs.iter().try_for_each(A100Question::validate)?;
        Ok(qs)
    }

    pub fn len(&self) -> usize {
        match self {
            QuestionSet::Fitb(q) => q.len(),
            QuestionSet::Cir(q) => q.len(),
            QuestionSet::A100(q) => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate_against(&self, catalog: &Catalog) -> Result<(), DatastoreError> {
        match self {
            QuestionSet::Fitb(q) => q.iter().try_for_each(|q| q.validate_against(catalog)),
            QuestionSet::Cir(q) => q.iter().try_for_each(|q| q.validate_against(catalog)),
            QuestionSet::A100(q) => q.iter().try_for_each(|q| q.validate_against(catalog)),
        }
    }
}
