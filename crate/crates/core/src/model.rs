//! Domain types shared by the metrics, aggregation and io layers.
//!
//! An [`Explanation`] is one explainer's ranked, signed attribution list for
//! a single predicted instance. List position is the rank (1-based); the
//! ingested order is authoritative even when weights are not sorted. A
//! feature that an explainer omits has rank `n + 1` and a neutral sign, where
//! `n` is the size of the feature universe of the enclosing
//! [`ExplanationSet`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("non-finite weight {0}")]
    NonFiniteWeight(f64),
    #[error("invalid neutral epsilon {0}: must be finite and non-negative")]
    InvalidEpsilon(f64),
    #[error("invalid aggregation config: {0}")]
    InvalidConfig(String),
}

/// Direction of a feature's contribution.
///
/// The derived ordering (positive, negative, neutral) exists for stable
/// reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
    Neutral,
}

impl Sign {
    pub const ALL: [Sign; 3] = [Sign::Positive, Sign::Negative, Sign::Neutral];

    /// Unchecked classification. Callers must have validated `weight`.
    pub(crate) fn classify(weight: f64, neutral_eps: f64) -> Sign {
        if weight.abs() <= neutral_eps {
            Sign::Neutral
        } else if weight > 0.0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Positive => "+",
            Sign::Negative => "-",
            Sign::Neutral => "0",
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Neutral iff `|weight| <= neutral_eps`, otherwise the sign of `weight`.
pub fn derive_sign(weight: f64, neutral_eps: f64) -> Result<Sign, ModelError> {
    if !weight.is_finite() {
        return Err(ModelError::NonFiniteWeight(weight));
    }
    if !neutral_eps.is_finite() || neutral_eps < 0.0 {
        return Err(ModelError::InvalidEpsilon(neutral_eps));
    }
    Ok(Sign::classify(weight, neutral_eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub weight: f64,
}

impl FeatureAttribution {
    pub fn new(feature: impl Into<String>, weight: f64) -> Self {
        Self {
            feature: feature.into(),
            weight,
        }
    }
}

/// One explainer's ordered attribution list.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    explainer: String,
    attributions: Vec<FeatureAttribution>,
}

impl Explanation {
    pub fn new(explainer: impl Into<String>, attributions: Vec<FeatureAttribution>) -> Self {
        Self {
            explainer: explainer.into(),
            attributions,
        }
    }

    /// Convenience constructor from `(feature, weight)` pairs in rank order.
    pub fn from_pairs<S: Into<String>>(
        explainer: impl Into<String>,
        pairs: impl IntoIterator<Item = (S, f64)>,
    ) -> Self {
        Self::new(
            explainer,
            pairs
                .into_iter()
                .map(|(f, w)| FeatureAttribution::new(f, w))
                .collect(),
        )
    }

    pub fn explainer(&self) -> &str {
        &self.explainer
    }

    pub fn attributions(&self) -> &[FeatureAttribution] {
        &self.attributions
    }

    pub fn len(&self) -> usize {
        self.attributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributions.is_empty()
    }

    /// 1-based rank of `feature`, or `None` when the explainer omits it.
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.attributions
            .iter()
            .position(|a| a.feature == feature)
            .map(|i| i + 1)
    }

    pub fn weight_of(&self, feature: &str) -> Option<f64> {
        self.attributions
            .iter()
            .find(|a| a.feature == feature)
            .map(|a| a.weight)
    }

    /// Sign of `feature` under the missing-feature convention.
    pub fn sign_of(&self, feature: &str, neutral_eps: f64) -> Sign {
        self.weight_of(feature)
            .map_or(Sign::Neutral, |w| Sign::classify(w, neutral_eps))
    }

    /// The first `min(k, len)` features in rank order.
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        self.attributions
            .iter()
            .take(k)
            .map(|a| a.feature.as_str())
            .collect()
    }

    /// Same list with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            explainer: self.explainer.clone(),
            attributions: self
                .attributions
                .iter()
                .map(|a| FeatureAttribution::new(a.feature.clone(), a.weight * factor))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Prediction {
    pub fn new(label: impl Into<String>, score: Option<f64>) -> Self {
        Self {
            label: label.into(),
            score,
        }
    }
}

/// All explainers' explanations for one predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSet {
    instance_id: String,
    prediction: Prediction,
    explanations: Vec<Explanation>,
}

impl ExplanationSet {
    pub fn new(
        instance_id: impl Into<String>,
        prediction: Prediction,
        explanations: Vec<Explanation>,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            prediction,
            explanations,
        }
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn explanations(&self) -> &[Explanation] {
        &self.explanations
    }

    pub fn explanation(&self, explainer: &str) -> Option<&Explanation> {
        self.explanations.iter().find(|e| e.explainer == explainer)
    }

    /// Union of features over all explanations, sorted by name.
    pub fn universe(&self) -> BTreeSet<&str> {
        self.explanations
            .iter()
            .flat_map(|e| e.attributions.iter().map(|a| a.feature.as_str()))
            .collect()
    }

    pub fn n_features(&self) -> usize {
        self.universe().len()
    }

    /// Rank of `feature` in `explanation`, with `n + 1` for omissions.
    pub fn padded_rank(&self, explanation: &Explanation, feature: &str) -> usize {
        explanation
            .rank_of(feature)
            .unwrap_or_else(|| self.n_features() + 1)
    }

    /// Copy with the explanations rearranged; used by invariance checks.
    pub fn with_explanations(&self, explanations: Vec<Explanation>) -> Self {
        Self {
            instance_id: self.instance_id.clone(),
            prediction: self.prediction.clone(),
            explanations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    MeanRankThenLexicographic,
}

/// Threshold boundaries, neutral epsilon and tie-break policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub small_max: usize,
    pub moderate_max: usize,
    pub k_small: usize,
    pub k_moderate: usize,
    pub k_large: usize,
    pub neutral_eps: f64,
    pub tie_break: TieBreak,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            small_max: 6,
            moderate_max: 15,
            k_small: 3,
            k_moderate: 5,
            k_large: 10,
            neutral_eps: 0.0,
            tie_break: TieBreak::MeanRankThenLexicographic,
        }
    }
}

impl AggregationConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        if self.small_max == 0 || self.small_max >= self.moderate_max {
            return Err(ModelError::InvalidConfig(format!(
                "need 0 < small_max < moderate_max, got {} and {}",
                self.small_max, self.moderate_max
            )));
        }
        if self.k_small == 0 || self.k_small > self.k_moderate || self.k_moderate > self.k_large {
            return Err(ModelError::InvalidConfig(format!(
                "need 0 < k_small <= k_moderate <= k_large, got {}/{}/{}",
                self.k_small, self.k_moderate, self.k_large
            )));
        }
        if !self.neutral_eps.is_finite() || self.neutral_eps < 0.0 {
            return Err(ModelError::InvalidEpsilon(self.neutral_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    EmptyInstanceId,
    TooFewExplainers,
    EmptyExplainerId,
    DuplicateExplainer,
    EmptyFeature,
    DuplicateFeature,
    NonFiniteWeight,
    ScoreOutOfRange,
    EmptyUniverse,
    UnsortedWeights,
}

impl FindingKind {
    pub fn severity(self) -> Severity {
        match self {
            FindingKind::UnsortedWeights => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

/// One violated invariant, with enough context to locate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub severity: Severity,
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explainer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}: instance '{}'", self.instance_id)?;
        if let Some(e) = &self.explainer {
            write!(f, ", explainer '{e}'")?;
        }
        if let Some(feat) = &self.feature {
            write!(f, ", feature '{feat}'")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Checks every invariant of `set` and reports one finding per violation.
///
/// Unsorted weights are reported as a warning; list order stays
/// authoritative for rank.
pub fn validate(set: &ExplanationSet) -> Vec<Finding> {
    let mut findings = Vec::new();
    let id = set.instance_id.as_str();
    let finding = |kind: FindingKind,
                   explainer: Option<&str>,
                   feature: Option<&str>,
                   message: String| Finding {
        kind,
        severity: kind.severity(),
        instance_id: id.to_string(),
        explainer: explainer.map(str::to_string),
        feature: feature.map(str::to_string),
        message,
    };

    if id.trim().is_empty() {
        findings.push(finding(
            FindingKind::EmptyInstanceId,
            None,
            None,
            "instance_id is empty".into(),
        ));
    }
    if set.explanations.len() < 2 {
        findings.push(finding(
            FindingKind::TooFewExplainers,
            None,
            None,
            format!(
                "need at least 2 explanations, found {}",
                set.explanations.len()
            ),
        ));
    }
    if let Some(score) = set.prediction.score {
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            findings.push(finding(
                FindingKind::ScoreOutOfRange,
                None,
                None,
                format!("prediction score {score} is outside [0, 1]"),
            ));
        }
    }

    let mut explainer_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &set.explanations {
        *explainer_counts.entry(e.explainer.as_str()).or_default() += 1;
    }
    for (name, count) in &explainer_counts {
        if name.trim().is_empty() {
            findings.push(finding(
                FindingKind::EmptyExplainerId,
                Some(name),
                None,
                "explainer identifier is empty".into(),
            ));
        }
        if *count > 1 {
            findings.push(finding(
                FindingKind::DuplicateExplainer,
                Some(name),
                None,
                format!("explainer appears {count} times"),
            ));
        }
    }

    for e in &set.explanations {
        let explainer = Some(e.explainer.as_str());
        let mut seen = BTreeSet::new();
        for a in &e.attributions {
            let feature = Some(a.feature.as_str());
            if a.feature.trim().is_empty() {
                findings.push(finding(
                    FindingKind::EmptyFeature,
                    explainer,
                    feature,
                    "feature identifier is empty".into(),
                ));
            }
            if !seen.insert(a.feature.as_str()) {
                findings.push(finding(
                    FindingKind::DuplicateFeature,
                    explainer,
                    feature,
                    "feature listed more than once".into(),
                ));
            }
            if !a.weight.is_finite() {
                findings.push(finding(
                    FindingKind::NonFiniteWeight,
                    explainer,
                    feature,
                    format!("weight {} is not finite", a.weight),
                ));
            }
        }
        let unsorted = e
            .attributions
            .windows(2)
            .find(|w| w[0].weight.abs() < w[1].weight.abs());
        if let Some(pair) = unsorted {
            findings.push(finding(
                FindingKind::UnsortedWeights,
                explainer,
                Some(pair[1].feature.as_str()),
                "weights are not ordered by non-increasing magnitude; list order is used as rank"
                    .into(),
            ));
        }
    }

    if set.n_features() == 0 {
        findings.push(finding(
            FindingKind::EmptyUniverse,
            None,
            None,
            "no features in any explanation".into(),
        ));
    }
    findings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub consensus_rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LooseRank,
    LooseSign,
}

/// A rank at which no feature held a strict plurality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieBreakRecord {
    pub rank: usize,
    /// Tied features, sorted by name.
    pub tied: Vec<String>,
    pub chosen: String,
}

/// Stage-by-stage record of one aggregation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregationTrace {
    pub n_features: usize,
    pub k_used: usize,
    pub strict_rank_set: Vec<RankedFeature>,
    /// Sorted by name.
    pub blacklist: Vec<String>,
    /// Present only when the loose rank stage fired.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loose_rank_set: Option<Vec<RankedFeature>>,
    pub strict_sign_set: Vec<String>,
    /// Present only when the loose sign stage fired.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loose_sign_set: Option<Vec<String>>,
    pub modes_used: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tie_breaks: Vec<TieBreakRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedFeature {
    pub feature: String,
    pub consensus_rank: usize,
    pub sign: Sign,
    pub mean_weight: f64,
    pub support: usize,
}

/// The unified top-k explanation for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedExplanation {
    pub instance_id: String,
    pub features: Vec<AggregatedFeature>,
    pub trace: AggregationTrace,
}

impl AggregatedExplanation {
    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.feature.as_str()).collect()
    }
}
