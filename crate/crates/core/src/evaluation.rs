//! Benchmark harness: FITB accuracy, recall@K, LAT/AAT scores and the
//! component ablation grid.
//!
//! Every aggregate in an [`EvalReport`] is computed from its per-question
//! records, so `report.reconciles()` holds by construction and is checked in
//! tests anyway.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attribute::AestheticAttribute;
use crate::datastore::{A100Question, CirQuery, FitbQuestion, TestKind};
use crate::fusion::Cue;
use crate::pipeline::{Engine, EngineError, PipelineConfig};

pub const DEFAULT_RECALL_KS: [usize; 3] = [10, 30, 50];

/// Label of the soft LAT metric carried in every report.
pub const LAT_SOFT_METRIC: &str = "mean_vote_share_of_chosen";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {question_id}: {source}")]
    Question {
        question_id: String,
        #[source]
        source: EngineError,
    },
    #[error("LAT question {0} has no vote shares")]
    MissingVoteShares(String),
    #[error("AAT question {0} has no attribute tag")]
    MissingAttributeTag(String),
    #[error("config `{config}`: {source}")]
    Config {
        config: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("invalid evaluation options: {0}")]
    Options(String),
}

impl EvalError {
    pub fn engine_error(&self) -> Option<&EngineError> {
        match self {
            EvalError::Question { source, .. } => Some(source),
            EvalError::Config { source, .. } => source.engine_error(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Fitb,
    Cir,
    Lat,
    Aat,
}

/// Outcome of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<usize>,
    pub correct: bool,
    pub scores: Vec<f64>,
    /// CIR: retrieved ids in rank order (up to the largest K).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_ids: Vec<String>,
    /// CIR: 0-based rank of the ground truth, if it was retrieved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AestheticAttribute>,
    /// Fusion gates behind the answer; empty when fusion was off.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gates: BTreeMap<Cue, f64>,
}

impl QuestionRecord {
    fn choice(question_id: &str, kind: RecordKind, choice: &FitbChoice, answer: usize) -> Self {
        Self {
            question_id: question_id.to_string(),
            kind,
            chosen: Some(choice.chosen),
            correct: choice.chosen == answer,
            scores: choice.scores.clone(),
            top_ids: Vec::new(),
            ground_truth_rank: None,
            vote_share: None,
            attribute: None,
            gates: choice.gates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitb_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_hard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_soft: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_soft_metric: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aat_per_attribute: BTreeMap<AestheticAttribute, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aat_total: Option<f64>,
    pub records: Vec<QuestionRecord>,
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

impl EvalReport {
    /// Builds a report whose aggregates are recomputed from `records`.
    pub fn from_records(config: PipelineConfig, ks: &[usize], mut records: Vec<QuestionRecord>) -> Self {
        records.sort_by(|a, b| (a.kind, &a.question_id).cmp(&(b.kind, &b.question_id)));
        let of = |kind| records.iter().filter(move |r: &&QuestionRecord| r.kind == kind);

        let fitb: Vec<_> = of(RecordKind::Fitb).collect();
        let fitb_accuracy = fraction(fitb.iter().filter(|r| r.correct).count(), fitb.len());

        let cir: Vec<_> = of(RecordKind::Cir).collect();
        let mut recall_at = BTreeMap::new();
        if !cir.is_empty() {
            for &k in ks {
                let hits = cir.iter().filter(|r| r.ground_truth_rank.is_some_and(|p| p < k)).count();
                recall_at.insert(k, hits as f64 / cir.len() as f64);
            }
        }

        let lat: Vec<_> = of(RecordKind::Lat).collect();
        let lat_hard = fraction(lat.iter().filter(|r| r.correct).count(), lat.len());
        let lat_soft = (!lat.is_empty())
            .then(|| lat.iter().map(|r| r.vote_share.unwrap_or(0.0)).sum::<f64>() / lat.len() as f64);

        let aat: Vec<_> = of(RecordKind::Aat).collect();
        let aat_total = fraction(aat.iter().filter(|r| r.correct).count(), aat.len());
        let mut per: BTreeMap<AestheticAttribute, (usize, usize)> = BTreeMap::new();
        for r in &aat {
            if let Some(a) = r.attribute {
                let e = per.entry(a).or_default();
                e.0 += r.correct as usize;
                e.1 += 1;
            }
        }
        let aat_per_attribute = per.into_iter().map(|(a, (h, n))| (a, h as f64 / n as f64)).collect();

        Self {
            config,
            fitb_accuracy,
            recall_at,
            lat_hard,
            lat_soft,
            lat_soft_metric: lat_soft.map(|_| LAT_SOFT_METRIC.to_string()),
            aat_per_attribute,
            aat_total,
            records,
        }
    }

    /// Combines fragments computed under the same config.
    pub fn merge(config: PipelineConfig, ks: &[usize], fragments: Vec<EvalReport>) -> Self {
        let records = fragments.into_iter().flat_map(|f| f.records).collect();
        Self::from_records(config, ks, records)
    }

    /// True when every aggregate equals its recomputation from the records.
    pub fn reconciles(&self) -> bool {
        let ks: Vec<usize> = self.recall_at.keys().copied().collect();
        let again = Self::from_records(self.config.clone(), &ks, self.records.clone());
        again == *self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// A chosen FITB candidate plus the scores behind the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct FitbChoice {
    pub chosen: usize,
    pub scores: Vec<f64>,
    pub gates: BTreeMap<Cue, f64>,
}

/// Anything that can answer a fill-in-the-blank question.
pub trait FitbPolicy: Sync {
    fn choose(&self, question: &FitbQuestion) -> Result<FitbChoice, EngineError>;
}

/// The full reasoning and fusion pipeline under one config.
pub struct EnginePolicy<'a> {
    pub engine: &'a Engine,
    pub config: &'a PipelineConfig,
}

impl FitbPolicy for EnginePolicy<'_> {
    fn choose(&self, question: &FitbQuestion) -> Result<FitbChoice, EngineError> {
        let answer = self.engine.answer_fitb(question, self.config)?;
        Ok(FitbChoice { chosen: answer.chosen, scores: answer.scores, gates: answer.query.diagnostics.gates })
    }
}

/// Uniform random choice, seeded per question id so the outcome does not
/// depend on evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub seed: u64,
}

impl RandomPolicy {
    fn rng_for(&self, question_id: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(question_id.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

impl FitbPolicy for RandomPolicy {
    fn choose(&self, question: &FitbQuestion) -> Result<FitbChoice, EngineError> {
        let n = question.candidate_item_ids.len();
        let chosen = self.rng_for(&question.question_id).random_range(0..n);
        Ok(FitbChoice { chosen, scores: Vec::new(), gates: BTreeMap::new() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; 1 evaluates sequentially.
    pub parallelism: usize,
    pub ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { parallelism: 1, ks: DEFAULT_RECALL_KS.to_vec() }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<(), EvalError> {
        if self.parallelism == 0 {
            return Err(EvalError::Options("parallelism must be >= 1".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Options("recall cut-offs must be nonempty and >= 1".into()));
        }
        Ok(())
    }

    fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }
}

/// Runs `f` over `items` on `parallelism` threads. Results come back in input
/// order; on failure the error of the smallest question id is returned so
/// the outcome does not depend on scheduling.
fn run_all<T, R, F>(items: &[T], id: impl Fn(&T) -> &str + Sync, parallelism: usize, f: F) -> Result<Vec<R>, EvalError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, EvalError> + Sync,
{
    let results: Vec<Result<R, EvalError>> = if parallelism <= 1 {
        items.iter().map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| EvalError::Options(e.to_string()))?;
        pool.install(|| items.par_iter().map(&f).collect())
    };
    let mut out = Vec::with_capacity(items.len());
    let mut first_err: Option<(&str, EvalError)> = None;
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                if first_err.as_ref().is_none_or(|(qid, _)| id(item) < *qid) {
                    first_err = Some((id(item), e));
                }
            }
        }
    }
    match first_err {
        Some((_, e)) => Err(e),
        None => Ok(out),
    }
}

fn tag(question_id: &str) -> impl Fn(EngineError) -> EvalError + '_ {
    move |source| EvalError::Question { question_id: question_id.to_string(), source }
}

/// FITB accuracy of `policy` over `questions`.
pub fn eval_fitb_with(
    policy: &dyn FitbPolicy,
    questions: &[FitbQuestion],
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    options.validate()?;
    let records = run_all(questions, |q| q.question_id.as_str(), options.parallelism, |q| {
        let choice = policy.choose(q).map_err(tag(&q.question_id))?;
        Ok(QuestionRecord::choice(&q.question_id, RecordKind::Fitb, &choice, q.answer_index))
    })?;
    Ok(EvalReport::from_records(config.clone(), &options.ks, records))
}

pub fn eval_fitb(
    engine: &Engine,
    questions: &[FitbQuestion],
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    eval_fitb_with(&EnginePolicy { engine, config }, questions, config, options)
}

/// Recall@K for outfit completion, retrieving within each query's target
/// category.
pub fn eval_cir(
    engine: &Engine,
    queries: &[CirQuery],
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    options.validate()?;
    let k = options.max_k();
    let records = run_all(queries, |q| q.query_id.as_str(), options.parallelism, |q| {
        q.validate_against(engine.catalog()).map_err(|e| tag(&q.query_id)(e.into()))?;
        let rec = engine
            .complete_outfit(&q.outfit_item_ids, &q.target_category, k, config)
            .map_err(tag(&q.query_id))?;
        let rank = rec.ranked.position_of(&q.ground_truth_item_id);
        Ok(QuestionRecord {
            question_id: q.query_id.clone(),
            kind: RecordKind::Cir,
            chosen: None,
            correct: rank == Some(0),
            scores: rec.ranked.items.iter().map(|r| r.score).collect(),
            top_ids: rec.ranked.items.iter().map(|r| r.item_id.clone()).collect(),
            ground_truth_rank: rank,
            vote_share: None,
            attribute: None,
            gates: rec.query.diagnostics.gates,
        })
    })?;
    Ok(EvalReport::from_records(config.clone(), &options.ks, records))
}

/// LAT hard/soft and AAT scores of `policy`.
pub fn eval_a100_with(
    policy: &dyn FitbPolicy,
    questions: &[A100Question],
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    options.validate()?;
    for q in questions {
        match q.test_kind {
            TestKind::Lat if q.vote_shares.is_none() => return Err(EvalError::MissingVoteShares(q.question_id.clone())),
            TestKind::Aat if q.attribute_tag.is_none() => {
                return Err(EvalError::MissingAttributeTag(q.question_id.clone()))
            }
            _ => {}
        }
    }
    let records = run_all(questions, |q| q.question_id.as_str(), options.parallelism, |q| {
        let choice = policy.choose(&q.as_fitb()).map_err(tag(&q.question_id))?;
        let kind = match q.test_kind {
            TestKind::Lat => RecordKind::Lat,
            TestKind::Aat => RecordKind::Aat,
        };
        let mut record = QuestionRecord::choice(&q.question_id, kind, &choice, q.answer_index);
        match q.test_kind {
            TestKind::Lat => {
                record.vote_share = q.vote_shares.as_ref().and_then(|v| v.get(choice.chosen)).copied();
            }
            TestKind::Aat => record.attribute = q.attribute_tag,
        }
        Ok(record)
    })?;
    Ok(EvalReport::from_records(config.clone(), &options.ks, records))
}

pub fn eval_a100(
    engine: &Engine,
    questions: &[A100Question],
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    eval_a100_with(&EnginePolicy { engine, config }, questions, config, options)
}

/// The question sets an ablation row is evaluated on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Datasets {
    pub fitb: Vec<FitbQuestion>,
    pub cir: Vec<CirQuery>,
    pub a100: Vec<A100Question>,
}

/// Every dataset under one config, as a single report.
pub fn eval_all(
    engine: &Engine,
    datasets: &Datasets,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut fragments = Vec::new();
    if !datasets.fitb.is_empty() {
        fragments.push(eval_fitb(engine, &datasets.fitb, config, options)?);
    }
    if !datasets.cir.is_empty() {
        fragments.push(eval_cir(engine, &datasets.cir, config, options)?);
    }
    if !datasets.a100.is_empty() {
        fragments.push(eval_a100(engine, &datasets.a100, config, options)?);
    }
    Ok(EvalReport::merge(config.clone(), &options.ks, fragments))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<EvalReport>,
    pub ks: Vec<usize>,
}

/// One report per config, in the order given.
pub fn run_ablation(
    engine: &Engine,
    grid: &[PipelineConfig],
    datasets: &Datasets,
    options: &EvalOptions,
) -> Result<AblationTable, EvalError> {
    let rows = grid
        .iter()
        .map(|cfg| {
            eval_all(engine, datasets, cfg, options)
                .map_err(|e| EvalError::Config { config: cfg.name.clone(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationTable { rows, ks: options.ks.clone() })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * 100.0))
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

impl AblationTable {
    /// Plain-text table, one row per config. Scores are percentages.
    pub fn render(&self) -> String {
        let mut header: Vec<String> = ["Config", "MLLM", "Ide.", "SVAF", "Aes.", "LATs", "mLATs", "AATs", "FITB"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.ks.iter().map(|k| format!("R@{k}")));
        let mut body: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            let c = &r.config;
            let mut row = vec![
                c.name.clone(),
                c.model.clone(),
                mark(c.identify_step).to_string(),
                mark(c.svaf_enabled).to_string(),
                mark(c.aesthetic_thoughts).to_string(),
                pct(r.lat_hard),
                pct(r.lat_soft),
                pct(r.aat_total),
                pct(r.fitb_accuracy),
            ];
            row.extend(self.ks.iter().map(|k| pct(r.recall_at.get(k).copied())));
            body.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                std::iter::once(&header[i])
                    .chain(body.iter().map(|r| &r[i]))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str(" | ");
                }
                let pad = widths[i] - cell.chars().count();
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        writeln!(out, "{}", line(&header)).unwrap();
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(out, "{}", line(&rule).replace(" | ", "-+-")).unwrap();
        for row in &body {
            writeln!(out, "{}", line(row)).unwrap();
        }
        out
    }

    /// One JSON report per line, in row order.
    pub fn to_ldj(&self) -> String {
        self.rows.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}
