//! Query construction from visual, textual and aesthetic cues.
//!
//! Everything in here is a pure function of its inputs. Vectors are stored as
//! `f32`; all reductions (dot products, norms, softmax, entropy) run in `f64`
//! and are rounded back to `f32` only when a [`UnitVector`] is produced.
//!
//! The pipeline is:
//!
//! 1. saliency aggregation ([`ta_isa`]): softmax over `v_t · v_o / tau` picks
//!    out the outfit images that matter for the missing slot and condenses
//!    them into one visual cue `v_I`;
//! 2. attribute aggregation ([`aa_va`]): each attribute embedding is scored
//!    against `v_t` and `v_I` and the attributes are mixed with
//!    `exp(sign * score)` weights into `v_AES`;
//! 3. entropy gating ([`de_gf`]): every present cue induces a softmax over the
//!    candidate set; cues with a peaked (low-entropy) distribution get a
//!    larger gate `exp(-H)`, and the query is the renormalized gated sum.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute::AestheticAttribute;

/// Saliency temperature used unless configured otherwise.
pub const DEFAULT_TAU: f64 = 0.01;

/// Softmax temperature applied to cosine similarities before measuring entropy.
pub const DEFAULT_ENTROPY_TEMPERATURE: f64 = 1.0;

/// Vectors whose L2 norm is at or below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Tolerance on `| ||v|| - 1 |` accepted by [`UnitVector::try_new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("vector norm is zero or degenerate (<= 1e-12)")]
    ZeroVector,
    #[error("vector contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector is not unit-norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("outfit is empty")]
    EmptyOutfit,
    #[error("attribute set is empty")]
    EmptyAttributes,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// Raw encoder output. Finite, but not necessarily normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// An L2-normalized vector (norm within [`UNIT_NORM_TOLERANCE`] of 1).
#[derive(Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f32>);

impl UnitVector {
    /// Wraps values that are already unit-norm. Values are kept bit-exact.
    pub fn try_new(values: Vec<f32>) -> Result<Self> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(FusionError::NotUnitNorm { norm });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dot(&self, other: &[f32]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl AsRef<[f32]> for UnitVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

impl fmt::Debug for UnitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            f.debug_tuple("UnitVector").field(&self.0).finish()
        } else {
            write!(f, "UnitVector(dim={}, head={:?})", self.0.len(), &self.0[..4])
        }
    }
}

impl<'de> Deserialize<'de> for UnitVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f32>::deserialize(deserializer)?;
        UnitVector::try_new(values).map_err(serde::de::Error::custom)
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(FusionError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Dot product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f32]) -> Result<UnitVector> {
    check_finite(v)?;
    let norm = l2_norm(v);
    if norm <= ZERO_NORM_EPS {
        return Err(FusionError::ZeroVector);
    }
    Ok(UnitVector(
        v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
    ))
}

fn normalize_f64(v: &[f64]) -> Result<UnitVector> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(FusionError::NonFinite { index: 0 });
    }
    if norm <= ZERO_NORM_EPS {
        return Err(FusionError::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|&x| (x / norm) as f32).collect()))
}

/// `sum_k weights[k] * vectors[k]`, accumulated in `f64`.
fn weighted_sum<V: AsRef<[f32]>>(weights: &[f64], vectors: &[V]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    let mut acc = vec![0.0f64; dim];
    for (w, v) in weights.iter().zip(vectors) {
        for (a, &x) in acc.iter_mut().zip(v.as_ref()) {
            *a += w * x as f64;
        }
    }
    acc
}

fn check_dims<V: AsRef<[f32]>>(expected: usize, vectors: &[V]) -> Result<()> {
    for v in vectors {
        let found = v.as_ref().len();
        if found != expected {
            return Err(FusionError::DimensionMismatch { expected, found });
        }
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(FusionError::InvalidTemperature(t))
    }
}

/// Numerically stable softmax. `logits` must be nonempty and finite.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Output of the saliency aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub weights: Vec<f64>,
    pub visual: UnitVector,
}

/// Target-aware saliency aggregation over the outfit images.
pub fn ta_isa(target_text: &UnitVector, outfit: &[UnitVector], tau: f64) -> Result<Saliency> {
    if outfit.is_empty() {
        return Err(FusionError::EmptyOutfit);
    }
    check_temperature(tau)?;
    check_dims(target_text.dim(), outfit)?;

    let logits: Vec<f64> = outfit.iter().map(|v| target_text.dot(v.as_slice()) / tau).collect();
    let weights = softmax(&logits);
    let visual = normalize_f64(&weighted_sum(&weights, outfit))?;
    Ok(Saliency { weights, visual })
}

/// Whether attribute weights grow or shrink with alignment to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AavaSign {
    /// `exp(+s)`: attributes already aligned with the target dominate.
    #[default]
    Positive,
    /// `exp(-s)`: attributes the target does not yet cover dominate.
    Negative,
}

impl AavaSign {
    pub fn factor(self) -> f64 {
        match self {
            AavaSign::Positive => 1.0,
            AavaSign::Negative => -1.0,
        }
    }
}

impl std::str::FromStr for AavaSign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+1" | "1" | "positive" | "+" => Ok(AavaSign::Positive),
            "-1" | "negative" | "-" => Ok(AavaSign::Negative),
            other => Err(format!("invalid aava sign `{other}` (expected +1 or -1)")),
        }
    }
}

/// Output of the attribute aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct AestheticAggregate {
    /// `(a·v_t + a·v_I) / 2` per attribute.
    pub scores: BTreeMap<AestheticAttribute, f64>,
    /// `exp(sign * score)`, before normalization.
    pub raw_weights: BTreeMap<AestheticAttribute, f64>,
    /// `raw_weights` normalized to sum to one.
    pub weights: BTreeMap<AestheticAttribute, f64>,
    pub aesthetic: UnitVector,
}

/// Adaptive aggregation of attribute embeddings into one aesthetic cue.
pub fn aa_va(
    attributes: &BTreeMap<AestheticAttribute, UnitVector>,
    target_text: &UnitVector,
    visual: &UnitVector,
    sign: AavaSign,
) -> Result<AestheticAggregate> {
    if attributes.is_empty() {
        return Err(FusionError::EmptyAttributes);
    }
    let dim = target_text.dim();
    check_dims(dim, std::slice::from_ref(visual))?;
    let vectors: Vec<&UnitVector> = attributes.values().collect();
    check_dims(dim, &vectors)?;

    let scores: Vec<f64> = vectors
        .iter()
        .map(|a| (a.dot(target_text.as_slice()) + a.dot(visual.as_slice())) / 2.0)
        .collect();
    let logits: Vec<f64> = scores.iter().map(|s| sign.factor() * s).collect();
    // The direction of the mix only depends on the normalized weights, so the
    // shifted softmax is used for the sum itself.
    let weights = softmax(&logits);
    let aesthetic = normalize_f64(&weighted_sum(&weights, &vectors))?;

    let keys = attributes.keys().copied();
    Ok(AestheticAggregate {
        scores: keys.clone().zip(scores.iter().copied()).collect(),
        raw_weights: keys.clone().zip(logits.iter().map(|l| l.exp())).collect(),
        weights: keys.zip(weights).collect(),
        aesthetic,
    })
}

/// Softmax of `similarities / temperature` together with its Shannon entropy
/// in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDistribution {
    pub probabilities: Vec<f64>,
    pub entropy: f64,
}

pub fn entropy_of_distribution(similarities: &[f64], temperature: f64) -> Result<CandidateDistribution> {
    if similarities.is_empty() {
        return Err(FusionError::EmptyCandidates);
    }
    check_temperature(temperature)?;
    if let Some(index) = similarities.iter().position(|s| !s.is_finite()) {
        return Err(FusionError::NonFinite { index });
    }
    let logits: Vec<f64> = similarities.iter().map(|s| s / temperature).collect();
    let probabilities = softmax(&logits);
    let entropy = -probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    // Rounding can leave a tiny negative value for one-hot distributions.
    let upper = (similarities.len() as f64).ln();
    Ok(CandidateDistribution { probabilities, entropy: entropy.clamp(0.0, upper) })
}

/// Names of the fused cues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cue {
    Visual,
    Text,
    Aesthetic,
}

impl Cue {
    pub fn as_str(self) -> &'static str {
        match self {
            Cue::Visual => "visual",
            Cue::Text => "text",
            Cue::Aesthetic => "aesthetic",
        }
    }
}

/// The cues available for gating. The textual cue is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct CueSet {
    pub visual: Option<UnitVector>,
    pub text: UnitVector,
    pub aesthetic: Option<UnitVector>,
}

impl CueSet {
    /// Present cues in canonical order (visual, text, aesthetic).
    pub fn present(&self) -> Vec<(Cue, &UnitVector)> {
        let mut out = Vec::with_capacity(3);
        if let Some(v) = &self.visual {
            out.push((Cue::Visual, v));
        }
        out.push((Cue::Text, &self.text));
        if let Some(v) = &self.aesthetic {
            out.push((Cue::Aesthetic, v));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }
}

/// Intermediate quantities of a fusion run, kept for explanations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionDiagnostics {
    pub saliency_weights: Vec<f64>,
    pub attribute_scores: BTreeMap<AestheticAttribute, f64>,
    pub attribute_weights: BTreeMap<AestheticAttribute, f64>,
    pub cue_entropies: BTreeMap<Cue, f64>,
    pub gates: BTreeMap<Cue, f64>,
}

impl FusionDiagnostics {
    pub fn is_empty(&self) -> bool {
        self.saliency_weights.is_empty()
            && self.attribute_scores.is_empty()
            && self.attribute_weights.is_empty()
            && self.cue_entropies.is_empty()
            && self.gates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryVector {
    pub q: UnitVector,
    pub diagnostics: FusionDiagnostics,
}

impl QueryVector {
    /// A query with no fusion applied (the textual cue alone).
    pub fn text_only(text: UnitVector) -> Self {
        Self { q: text, diagnostics: FusionDiagnostics::default() }
    }
}

/// Entropy-gated fusion of the present cues against a candidate set.
pub fn de_gf<C: AsRef<[f32]>>(
    cues: &CueSet,
    candidates: &[C],
    temperature: f64,
) -> Result<QueryVector> {
    if candidates.is_empty() {
        return Err(FusionError::EmptyCandidates);
    }
    let dim = cues.dim();
    check_dims(dim, candidates)?;
    let present = cues.present();
    let cue_vectors: Vec<&UnitVector> = present.iter().map(|(_, v)| *v).collect();
    check_dims(dim, &cue_vectors)?;

    let mut cue_entropies = BTreeMap::new();
    let mut raw_gates = Vec::with_capacity(present.len());
    for (cue, vector) in &present {
        let sims: Vec<f64> = candidates.iter().map(|c| vector.dot(c.as_ref())).collect();
        let dist = entropy_of_distribution(&sims, temperature)?;
        cue_entropies.insert(*cue, dist.entropy);
        raw_gates.push((-dist.entropy).exp());
    }
    let total: f64 = raw_gates.iter().sum();
    let gates: Vec<f64> = raw_gates.iter().map(|g| g / total).collect();
    let q = normalize_f64(&weighted_sum(&gates, &cue_vectors))?;

    Ok(QueryVector {
        q,
        diagnostics: FusionDiagnostics {
            cue_entropies,
            gates: present.iter().map(|(c, _)| *c).zip(gates).collect(),
            ..FusionDiagnostics::default()
        },
    })
}

/// Knobs for [`build_query`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub tau: f64,
    pub aava_sign: AavaSign,
    pub entropy_temperature: f64,
    /// When false the query is the target-description embedding alone.
    pub svaf_enabled: bool,
    /// When false the aesthetic cue is never built.
    pub aesthetic_thoughts: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            aava_sign: AavaSign::Positive,
            entropy_temperature: DEFAULT_ENTROPY_TEMPERATURE,
            svaf_enabled: true,
            aesthetic_thoughts: true,
        }
    }
}

/// Cues built from the outfit and the reasoning output, before gating.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCues {
    pub cues: CueSet,
    pub saliency_weights: Vec<f64>,
    pub aggregate: Option<AestheticAggregate>,
}

/// Runs saliency aggregation and (when enabled and available) attribute
/// aggregation. An empty attribute map is treated like an absent one.
pub fn prepare_cues(
    outfit: &[UnitVector],
    target_text: &UnitVector,
    attributes: Option<&BTreeMap<AestheticAttribute, UnitVector>>,
    config: &FusionConfig,
) -> Result<PreparedCues> {
    let saliency = ta_isa(target_text, outfit, config.tau)?;
    let aggregate = match attributes {
        Some(attrs) if config.aesthetic_thoughts && !attrs.is_empty() => {
            Some(aa_va(attrs, target_text, &saliency.visual, config.aava_sign)?)
        }
        _ => None,
    };
    Ok(PreparedCues {
        cues: CueSet {
            visual: Some(saliency.visual),
            text: target_text.clone(),
            aesthetic: aggregate.as_ref().map(|a| a.aesthetic.clone()),
        },
        saliency_weights: saliency.weights,
        aggregate,
    })
}

/// Gates prepared cues against `candidates` and merges all diagnostics.
pub fn fuse_prepared<C: AsRef<[f32]>>(
    prepared: PreparedCues,
    candidates: &[C],
    config: &FusionConfig,
) -> Result<QueryVector> {
    let mut query = de_gf(&prepared.cues, candidates, config.entropy_temperature)?;
    query.diagnostics.saliency_weights = prepared.saliency_weights;
    if let Some(agg) = prepared.aggregate {
        query.diagnostics.attribute_scores = agg.scores;
        query.diagnostics.attribute_weights = agg.weights;
    }
    Ok(query)
}

/// Builds the retrieval query from the outfit images, the target-description
/// embedding and (optionally) the attribute embeddings, gating against
/// `candidates`.
///
/// With fusion disabled the query is the target-description embedding itself
/// and the diagnostics are empty.
pub fn build_query<C: AsRef<[f32]>>(
    outfit: &[UnitVector],
    target_text: &UnitVector,
    attributes: Option<&BTreeMap<AestheticAttribute, UnitVector>>,
    candidates: &[C],
    config: &FusionConfig,
) -> Result<QueryVector> {
    if outfit.is_empty() {
        return Err(FusionError::EmptyOutfit);
    }
    if candidates.is_empty() {
        return Err(FusionError::EmptyCandidates);
    }
    if !config.svaf_enabled {
        return Ok(QueryVector::text_only(target_text.clone()));
    }
    let prepared = prepare_cues(outfit, target_text, attributes, config)?;
    fuse_prepared(prepared, candidates, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a as f64, $b as f64);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn unit(v: &[f32]) -> UnitVector {
        normalize(v).unwrap()
    }

    fn basis(dim: usize, i: usize) -> UnitVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        UnitVector::try_new(v).unwrap()
    }

    /// Unit vector in the plane of e0/e1 whose dot with e0 is `cos`.
    fn with_cos(cos: f64, dim: usize) -> UnitVector {
        let mut v = vec![0.0f32; dim];
        v[0] = cos as f32;
        v[1] = (1.0 - cos * cos).sqrt() as f32;
        unit(&v)
    }

    #[test]
    fn normalize_three_four_five() {
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert_close!(u.as_slice()[0], 0.6, 1e-7);
        assert_close!(u.as_slice()[1], 0.8, 1e-7);
    }

    #[test]
    fn normalize_rejects_zero_and_nan() {
        assert_eq!(normalize(&[0.0; 16]), Err(FusionError::ZeroVector));
        assert_eq!(normalize(&[1.0, f32::NAN]), Err(FusionError::NonFinite { index: 1 }));
        assert!(Embedding::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn try_new_checks_norm() {
        assert!(UnitVector::try_new(vec![0.5, 0.5]).is_err());
        assert!(UnitVector::try_new(vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn single_item_outfit_passes_through() {
        let v_t = basis(4, 0);
        let v_o = unit(&[0.1, 0.7, -0.2, 0.3]);
        let s = ta_isa(&v_t, std::slice::from_ref(&v_o), 0.01).unwrap();
        assert_eq!(s.weights, vec![1.0]);
        for (a, b) in s.visual.as_slice().iter().zip(v_o.as_slice()) {
            assert_close!(*a, *b, 1e-7);
        }
    }

    #[test]
    fn saliency_weights_at_half_temperature() {
        let v_t = basis(3, 0);
        let outfit = [with_cos(0.8, 3), with_cos(0.4, 3)];
        let s = ta_isa(&v_t, &outfit, 0.5).unwrap();
        // softmax(1.6, 0.8)
        assert_close!(s.weights[0], 0.689_974_481_127_613, 1e-6);
        assert_close!(s.weights[1], 0.310_025_518_872_387, 1e-6);
    }

    #[test]
    fn default_tau_is_nearly_hard() {
        let v_t = basis(3, 0);
        let outfit = [with_cos(0.5, 3), with_cos(0.4, 3)];
        let s = ta_isa(&v_t, &outfit, DEFAULT_TAU).unwrap();
        assert!(s.weights[0] > 0.9999);
    }

    #[test]
    fn ta_isa_errors() {
        let v_t = basis(3, 0);
        assert_eq!(ta_isa(&v_t, &[], 0.01), Err(FusionError::EmptyOutfit));
        assert_eq!(
            ta_isa(&v_t, &[basis(3, 1)], 0.0),
            Err(FusionError::InvalidTemperature(0.0))
        );
        // Equal weights over antipodal items cancel out.
        let a = basis(3, 1);
        let b = unit(&[0.0, -1.0, 0.0]);
        assert_eq!(ta_isa(&v_t, &[a, b], 1.0), Err(FusionError::ZeroVector));
        assert!(matches!(
            ta_isa(&v_t, &[basis(4, 1)], 1.0),
            Err(FusionError::DimensionMismatch { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn single_attribute_is_returned_verbatim() {
        let a = unit(&[0.3, -0.2, 0.9]);
        let attrs = BTreeMap::from([(AestheticAttribute::Season, a.clone())]);
        let agg = aa_va(&attrs, &basis(3, 0), &basis(3, 1), AavaSign::Positive).unwrap();
        for (x, y) in agg.aesthetic.as_slice().iter().zip(a.as_slice()) {
            assert_close!(*x, *y, 1e-7);
        }
        assert_close!(agg.weights[&AestheticAttribute::Season], 1.0, 1e-12);
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        // Attributes orthogonal to both v_t and v_I score 0.
        let attrs: BTreeMap<_, _> = [
            (AestheticAttribute::Color, basis(5, 2)),
            (AestheticAttribute::Style, basis(5, 3)),
            (AestheticAttribute::Balance, basis(5, 4)),
        ]
        .into_iter()
        .collect();
        let agg = aa_va(&attrs, &basis(5, 0), &basis(5, 1), AavaSign::Positive).unwrap();
        for w in agg.weights.values() {
            assert_close!(*w, 1.0 / 3.0, 1e-12);
        }
        let expected = unit(&[0.0, 0.0, 1.0, 1.0, 1.0]);
        for (x, y) in agg.aesthetic.as_slice().iter().zip(expected.as_slice()) {
            assert_close!(*x, *y, 1e-7);
        }
    }

    #[test]
    fn attribute_weights_follow_exp_of_scores() {
        // v_t = v_I = e0, so the score of an attribute is its cosine with e0.
        let attrs: BTreeMap<_, _> = [
            (AestheticAttribute::Color, with_cos(0.6, 3)),
            (AestheticAttribute::Style, with_cos(0.2, 3)),
        ]
        .into_iter()
        .collect();
        let agg = aa_va(&attrs, &basis(3, 0), &basis(3, 0), AavaSign::Positive).unwrap();
        assert_close!(agg.scores[&AestheticAttribute::Color], 0.6, 1e-6);
        assert_close!(agg.raw_weights[&AestheticAttribute::Color], 1.8221, 1e-4);
        assert_close!(agg.raw_weights[&AestheticAttribute::Style], 1.2214, 1e-4);
        assert_close!(agg.weights[&AestheticAttribute::Color], 0.5987, 1e-4);
        assert_close!(agg.weights[&AestheticAttribute::Style], 0.4013, 1e-4);

        let neg = aa_va(&attrs, &basis(3, 0), &basis(3, 0), AavaSign::Negative).unwrap();
        assert_close!(neg.weights[&AestheticAttribute::Color], 0.4013, 1e-4);
    }

    #[test]
    fn aa_va_rejects_empty() {
        let e = BTreeMap::new();
        assert_eq!(
            aa_va(&e, &basis(2, 0), &basis(2, 1), AavaSign::Positive),
            Err(FusionError::EmptyAttributes)
        );
    }

    #[test]
    fn entropy_examples() {
        let single = entropy_of_distribution(&[0.3], 1.0).unwrap();
        assert_eq!(single.probabilities, vec![1.0]);
        assert_eq!(single.entropy, 0.0);

        let flat = entropy_of_distribution(&[0.2; 4], 1.0).unwrap();
        assert_close!(flat.entropy, 4f64.ln(), 1e-12);

        let two = entropy_of_distribution(&[1.0, 0.0], 1.0).unwrap();
        assert_close!(two.probabilities[0], 0.731_058_578_630_005, 1e-12);
        assert_close!(two.entropy, 0.582_203_108_888_218, 1e-12);

        assert_eq!(entropy_of_distribution(&[], 1.0), Err(FusionError::EmptyCandidates));
    }

    #[test]
    fn single_candidate_forces_uniform_gates() {
        let cues = CueSet {
            visual: Some(basis(3, 0)),
            text: basis(3, 1),
            aesthetic: Some(basis(3, 2)),
        };
        let q = de_gf(&cues, &[unit(&[0.3, 0.1, 0.5])], 1.0).unwrap();
        for g in q.diagnostics.gates.values() {
            assert_close!(*g, 1.0 / 3.0, 1e-12);
        }
        for h in q.diagnostics.cue_entropies.values() {
            assert_eq!(*h, 0.0);
        }
        let expected = unit(&[1.0, 1.0, 1.0]);
        for (x, y) in q.q.as_slice().iter().zip(expected.as_slice()) {
            assert_close!(*x, *y, 1e-7);
        }
    }

    #[test]
    fn gates_from_two_cue_example() {
        // Visual cue sees similarities (1, 0); text cue sees (0.5, 0.5).
        let c1 = basis(4, 0);
        let c2 = basis(4, 1);
        let visual = basis(4, 0);
        let text = unit(&[0.5, 0.5, 0.0, (0.5f32).sqrt()]);
        let cues = CueSet { visual: Some(visual), text, aesthetic: None };
        let q = de_gf(&cues, &[c1, c2], 1.0).unwrap();
        let d = &q.diagnostics;
        assert_close!(d.cue_entropies[&Cue::Visual], 0.5822, 1e-4);
        assert_close!(d.cue_entropies[&Cue::Text], std::f64::consts::LN_2, 1e-7);
        assert_close!(d.gates[&Cue::Visual], 0.5277, 1e-4);
        assert_close!(d.gates[&Cue::Text], 0.4723, 1e-4);
        assert!(!d.gates.contains_key(&Cue::Aesthetic));
    }

    #[test]
    fn identical_cues_give_that_cue() {
        let v = unit(&[0.2, -0.4, 0.1, 0.8]);
        let cues = CueSet { visual: Some(v.clone()), text: v.clone(), aesthetic: Some(v.clone()) };
        let cands = [basis(4, 0), basis(4, 1), unit(&[1.0, 1.0, 1.0, 1.0])];
        let q = de_gf(&cues, &cands, 1.0).unwrap();
        for (x, y) in q.q.as_slice().iter().zip(v.as_slice()) {
            assert_close!(*x, *y, 1e-6);
        }
    }

    #[test]
    fn build_query_collapses_for_identical_inputs() {
        let v = unit(&[0.5, 0.5, 0.5, 0.5]);
        let q = build_query(
            std::slice::from_ref(&v),
            &v,
            None,
            std::slice::from_ref(&v),
            &FusionConfig::default(),
        )
        .unwrap();
        for (x, y) in q.q.as_slice().iter().zip(v.as_slice()) {
            assert_close!(*x, *y, 1e-6);
        }
    }

    #[test]
    fn svaf_disabled_returns_text_cue_exactly() {
        let v_t = unit(&[0.1, 0.2, 0.3]);
        let cfg = FusionConfig { svaf_enabled: false, ..FusionConfig::default() };
        let q = build_query(&[basis(3, 0)], &v_t, None, &[basis(3, 1)], &cfg).unwrap();
        assert_eq!(q.q, v_t);
        assert!(q.diagnostics.is_empty());
    }

    #[test]
    fn aesthetic_toggle_drops_the_cue() {
        let attrs = BTreeMap::from([(AestheticAttribute::Color, basis(3, 2))]);
        let cfg = FusionConfig { aesthetic_thoughts: false, ..FusionConfig::default() };
        let q = build_query(&[basis(3, 0)], &basis(3, 1), Some(&attrs), &[basis(3, 1)], &cfg)
            .unwrap();
        assert_eq!(q.diagnostics.gates.len(), 2);
        assert!(q.diagnostics.attribute_weights.is_empty());

        let q = build_query(
            &[basis(3, 0)],
            &basis(3, 1),
            Some(&attrs),
            &[basis(3, 1)],
            &FusionConfig::default(),
        )
        .unwrap();
        assert_eq!(q.diagnostics.gates.len(), 3);
        assert_eq!(q.diagnostics.attribute_weights.len(), 1);
    }

    #[test]
    fn sign_parses() {
        assert_eq!("+1".parse::<AavaSign>().unwrap(), AavaSign::Positive);
        assert_eq!("-1".parse::<AavaSign>().unwrap(), AavaSign::Negative);
        assert!("0".parse::<AavaSign>().is_err());
    }
}
