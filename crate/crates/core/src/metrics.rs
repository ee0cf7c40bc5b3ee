//! Pairwise feature, rank and sign agreement between two explanations.
//!
//! All three metrics divide by `k`, not by the size of the intersection, so
//! `RA <= FA` and `SA <= FA` hold structurally. Explanations shorter than
//! `k` are treated as padded with absent features, which never enter an
//! intersection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::aggregate::threshold_k;
use crate::model::{AggregationConfig, Explanation, ExplanationSet, Sign};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("unknown explainer '{0}'")]
    UnknownExplainer(String),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    #[serde(rename = "FA")]
    FeatureAgreement,
    #[serde(rename = "RA")]
    RankAgreement,
    #[serde(rename = "SA")]
    SignAgreement,
}

impl Metric {
    pub const ALL: [Metric; 3] = [
        Metric::FeatureAgreement,
        Metric::RankAgreement,
        Metric::SignAgreement,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Metric::FeatureAgreement => "FA",
            Metric::RankAgreement => "RA",
            Metric::SignAgreement => "SA",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FA" => Ok(Metric::FeatureAgreement),
            "RA" => Ok(Metric::RankAgreement),
            "SA" => Ok(Metric::SignAgreement),
            other => Err(format!("unknown metric '{other}', expected FA, RA or SA")),
        }
    }
}

/// Raw counts behind the three agreement metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct AgreementCounts {
    shared: usize,
    same_rank: usize,
    same_sign: usize,
}

fn count_agreement(
    e1: &Explanation,
    e2: &Explanation,
    k: usize,
    neutral_eps: f64,
) -> AgreementCounts {
    let top2 = &e2.attributions()[..k.min(e2.len())];
    let mut counts = AgreementCounts::default();
    for (i, a) in e1.attributions().iter().take(k).enumerate() {
        let Some(j) = top2.iter().position(|b| b.feature == a.feature) else {
            continue;
        };
        counts.shared += 1;
        if i == j {
            counts.same_rank += 1;
        }
        if Sign::classify(a.weight, neutral_eps) == Sign::classify(top2[j].weight, neutral_eps) {
            counts.same_sign += 1;
        }
    }
    counts
}

fn ratio(count: usize, k: usize) -> f64 {
    count as f64 / k as f64
}

/// `|top_k(e1) ∩ top_k(e2)| / k`. Panics if `k == 0`.
pub fn feature_agreement(e1: &Explanation, e2: &Explanation, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    ratio(count_agreement(e1, e2, k, 0.0).shared, k)
}

/// Shared top-k features at the same rank in both lists, over `k`.
pub fn rank_agreement(e1: &Explanation, e2: &Explanation, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    ratio(count_agreement(e1, e2, k, 0.0).same_rank, k)
}

/// Shared top-k features with the same sign in both lists, over `k`.
pub fn sign_agreement(e1: &Explanation, e2: &Explanation, k: usize) -> f64 {
    sign_agreement_with_eps(e1, e2, k, 0.0)
}

pub fn sign_agreement_with_eps(
    e1: &Explanation,
    e2: &Explanation,
    k: usize,
    neutral_eps: f64,
) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    ratio(count_agreement(e1, e2, k, neutral_eps).same_sign, k)
}

/// `(k·(FA−RA), k·(FA−SA))`, i.e. shared features whose rank or sign differ.
pub fn disagreement_counts(e1: &Explanation, e2: &Explanation, k: usize) -> (usize, usize) {
    let m = pair_metrics(e1, e2, k, 0.0);
    (m.rank_mismatch_count, m.sign_mismatch_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMetrics {
    pub k: usize,
    pub fa: f64,
    pub ra: f64,
    pub sa: f64,
    pub rank_mismatch_count: usize,
    pub sign_mismatch_count: usize,
}

impl PairMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::FeatureAgreement => self.fa,
            Metric::RankAgreement => self.ra,
            Metric::SignAgreement => self.sa,
        }
    }
}

/// All three metrics and both mismatch counts in one pass.
///
/// The counts come straight from the intersection tallies; they equal
/// `round(k·(FA−RA))` and `round(k·(FA−SA))` exactly.
pub fn pair_metrics(e1: &Explanation, e2: &Explanation, k: usize, neutral_eps: f64) -> PairMetrics {
    assert!(k >= 1, "k must be at least 1");
    let c = count_agreement(e1, e2, k, neutral_eps);
    PairMetrics {
        k,
        fa: ratio(c.shared, k),
        ra: ratio(c.same_rank, k),
        sa: ratio(c.same_sign, k),
        rank_mismatch_count: c.shared - c.same_rank,
        sign_mismatch_count: c.shared - c.same_sign,
    }
}

/// Symmetric explainer-by-explainer matrix of one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseMatrix {
    pub metric: Metric,
    pub k: usize,
    /// Row and column labels, sorted by name.
    pub explainers: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl PairwiseMatrix {
    pub fn get(&self, a: &str, b: &str) -> Result<f64, MetricsError> {
        let i = self.index_of(a)?;
        let j = self.index_of(b)?;
        Ok(self.values[i][j])
    }

    fn index_of(&self, name: &str) -> Result<usize, MetricsError> {
        self.explainers
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| MetricsError::UnknownExplainer(name.to_string()))
    }
}

pub fn pairwise_matrix(
    set: &ExplanationSet,
    k: usize,
    metric: Metric,
    neutral_eps: f64,
) -> Result<PairwiseMatrix, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut explanations: Vec<&Explanation> = set.explanations().iter().collect();
    explanations.sort_by(|a, b| a.explainer().cmp(b.explainer()));
    let size = explanations.len();
    let mut values = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in i..size {
            let v = pair_metrics(explanations[i], explanations[j], k, neutral_eps).get(metric);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(PairwiseMatrix {
        metric,
        k,
        explainers: explanations
            .iter()
            .map(|e| e.explainer().to_string())
            .collect(),
        values,
    })
}

/// Metrics for a named pair within one set.
pub fn named_pair_metrics(
    set: &ExplanationSet,
    a: &str,
    b: &str,
    k: usize,
    neutral_eps: f64,
) -> Result<PairMetrics, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let lookup = |name: &str| {
        set.explanation(name)
            .ok_or_else(|| MetricsError::UnknownExplainer(name.to_string()))
    };
    Ok(pair_metrics(lookup(a)?, lookup(b)?, k, neutral_eps))
}

/// How `k` is chosen per instance in corpus analyses.
#[derive(Debug, Clone, PartialEq)]
pub enum KPolicy {
    Fixed(usize),
    Threshold(AggregationConfig),
}

impl KPolicy {
    pub fn k_for(&self, set: &ExplanationSet) -> usize {
        match self {
            KPolicy::Fixed(k) => *k,
            KPolicy::Threshold(config) => threshold_k(set.n_features().max(1), config),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub instance_id: String,
    pub explainer_a: String,
    pub explainer_b: String,
    #[serde(flatten)]
    pub metrics: PairMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct MismatchHistogram {
    /// mismatch count → number of (instance, pair) observations
    pub rank: BTreeMap<usize, u64>,
    pub sign: BTreeMap<usize, u64>,
}

impl MismatchHistogram {
    pub fn total(&self) -> u64 {
        self.rank.values().sum()
    }

    fn mean(table: &BTreeMap<usize, u64>) -> Option<f64> {
        let total: u64 = table.values().sum();
        if total == 0 {
            return None;
        }
        let weighted: u64 = table.iter().map(|(v, c)| *v as u64 * c).sum();
        Some(weighted as f64 / total as f64)
    }

    pub fn mean_rank_mismatch(&self) -> Option<f64> {
        Self::mean(&self.rank)
    }

    pub fn mean_sign_mismatch(&self) -> Option<f64> {
        Self::mean(&self.sign)
    }
}

/// Per-pair records and mismatch histograms over a corpus.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DisagreementReport {
    /// Ordered by instance id, then explainer pair.
    pub pairs: Vec<PairRecord>,
    /// Keyed by `"A:B"` with `A < B`.
    pub histograms: BTreeMap<String, MismatchHistogram>,
}

impl DisagreementReport {
    /// All pairs folded into one histogram.
    pub fn combined(&self) -> MismatchHistogram {
        let mut out = MismatchHistogram::default();
        for h in self.histograms.values() {
            for (v, c) in &h.rank {
                *out.rank.entry(*v).or_default() += c;
            }
            for (v, c) in &h.sign {
                *out.sign.entry(*v).or_default() += c;
            }
        }
        out
    }
}

pub fn pair_key(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

/// Every unordered explainer pair of every set, with histograms of the two
/// mismatch counts per pair. Sets are processed in ascending instance id.
pub fn corpus_histograms(
    sets: &[ExplanationSet],
    k_policy: &KPolicy,
    neutral_eps: f64,
) -> DisagreementReport {
    let mut ordered: Vec<&ExplanationSet> = sets.iter().collect();
    ordered.sort_by(|a, b| a.instance_id().cmp(b.instance_id()));

    let mut report = DisagreementReport::default();
    for set in ordered {
        let k = k_policy.k_for(set).max(1);
        let mut explanations: Vec<&Explanation> = set.explanations().iter().collect();
        explanations.sort_by(|a, b| a.explainer().cmp(b.explainer()));
        for (i, a) in explanations.iter().enumerate() {
            for b in &explanations[i + 1..] {
                let metrics = pair_metrics(a, b, k, neutral_eps);
                let hist = report
                    .histograms
                    .entry(pair_key(a.explainer(), b.explainer()))
                    .or_default();
                *hist.rank.entry(metrics.rank_mismatch_count).or_default() += 1;
                *hist.sign.entry(metrics.sign_mismatch_count).or_default() += 1;
                report.pairs.push(PairRecord {
                    instance_id: set.instance_id().to_string(),
                    explainer_a: a.explainer().to_string(),
                    explainer_b: b.explainer().to_string(),
                    metrics,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{table1, table2};
    use crate::model::Prediction;

    fn lime_shap() -> (Explanation, Explanation) {
        let t = table2();
        (
            t.explanation("LIME").unwrap().clone(),
            t.explanation("SHAP").unwrap().clone(),
        )
    }

    #[test]
    fn table2_metrics_at_five() {
        let (lime, shap) = lime_shap();
        assert_eq!(feature_agreement(&lime, &shap, 5), 1.0);
        assert_eq!(rank_agreement(&lime, &shap, 5), 0.2);
        assert_eq!(sign_agreement(&lime, &shap, 5), 0.8);
        assert_eq!(disagreement_counts(&lime, &shap, 5), (4, 1));
    }

    #[test]
    fn identity_and_disjoint() {
        let (lime, _) = lime_shap();
        for k in 1..=8 {
            let expected = k.min(lime.len()) as f64 / k as f64;
            assert_eq!(feature_agreement(&lime, &lime, k), expected);
            assert_eq!(rank_agreement(&lime, &lime, k), expected);
            assert_eq!(sign_agreement(&lime, &lime, k), expected);
            assert_eq!(disagreement_counts(&lime, &lime, k), (0, 0));
        }
        let other = Explanation::from_pairs("X", [("a", 1.0), ("b", -0.5), ("c", 0.1)]);
        assert_eq!(feature_agreement(&lime, &other, 3), 0.0);
        assert_eq!(rank_agreement(&lime, &other, 3), 0.0);
        assert_eq!(sign_agreement(&lime, &other, 3), 0.0);
        assert_eq!(disagreement_counts(&lime, &other, 3), (0, 0));
    }

    #[test]
    fn table1_lime_breakdown_top3() {
        let t = table1();
        let lime = t.explanation("LIME").unwrap();
        let bd = t.explanation("BreakDown").unwrap();
        assert_eq!(feature_agreement(lime, bd, 3), 1.0);
        assert_eq!(rank_agreement(lime, bd, 3), 1.0 / 3.0);
        // F1 (+,+), F2 (-,-), F3 (+,+)
        assert_eq!(sign_agreement(lime, bd, 3), 1.0);
    }

    #[test]
    fn shorter_than_k_counts_against_k() {
        let a = Explanation::from_pairs("a", [("x", 1.0)]);
        let b = Explanation::from_pairs("b", [("x", 1.0), ("y", 0.5)]);
        assert_eq!(feature_agreement(&a, &b, 4), 0.25);
    }

    #[test]
    fn neutral_eps_changes_sign_agreement() {
        let a = Explanation::from_pairs("a", [("x", 0.01)]);
        let b = Explanation::from_pairs("b", [("x", -0.02)]);
        assert_eq!(sign_agreement(&a, &b, 1), 0.0);
        assert_eq!(sign_agreement_with_eps(&a, &b, 1, 0.05), 1.0);
    }

    #[test]
    fn table1_matrices() {
        let t = table1();
        let fa = pairwise_matrix(&t, 7, Metric::FeatureAgreement, 0.0).unwrap();
        assert!(fa.values.iter().flatten().all(|v| *v == 1.0));

        let ra = pairwise_matrix(&t, 7, Metric::RankAgreement, 0.0).unwrap();
        assert_eq!(ra.explainers, vec!["BreakDown", "LIME", "SHAP"]);
        // LIME vs BreakDown: F1, F5, F4, F6, F7 share a rank
        assert_eq!(ra.get("LIME", "BreakDown").unwrap(), 5.0 / 7.0);
        // LIME vs SHAP: only F1
        assert_eq!(ra.get("LIME", "SHAP").unwrap(), 1.0 / 7.0);
        // SHAP vs BreakDown: F1, F3, F2
        assert_eq!(ra.get("SHAP", "BreakDown").unwrap(), 3.0 / 7.0);
        for e in &ra.explainers {
            assert_eq!(ra.get(e, e).unwrap(), 1.0);
        }
        assert_eq!(
            ra.get("LIME", "Anchor"),
            Err(MetricsError::UnknownExplainer("Anchor".into()))
        );
    }

    #[test]
    fn identical_triplet_matrix_is_all_ones() {
        let e = Explanation::from_pairs("a", [("x", 0.3), ("y", -0.2)]);
        let set = ExplanationSet::new(
            "same",
            Prediction::new("Defect", None),
            vec![
                e.clone(),
                Explanation::new("b", e.attributions().to_vec()),
                Explanation::new("c", e.attributions().to_vec()),
            ],
        );
        let m = pairwise_matrix(&set, 2, Metric::FeatureAgreement, 0.0).unwrap();
        assert!(m.values.iter().flatten().all(|v| *v == 1.0));
    }

    #[test]
    fn histograms_for_table2_pair() {
        let report = corpus_histograms(&[table2()], &KPolicy::Fixed(5), 0.0);
        let h = &report.histograms["LIME:SHAP"];
        assert_eq!(h.rank, BTreeMap::from([(4, 1)]));
        assert_eq!(h.sign, BTreeMap::from([(1, 1)]));
        assert_eq!(report.pairs.len(), 1);
    }

    #[test]
    fn histograms_empty_corpus() {
        let report = corpus_histograms(&[], &KPolicy::Fixed(3), 0.0);
        assert!(report.pairs.is_empty());
        assert!(report.histograms.is_empty());
    }

    #[test]
    fn histogram_mass_counts_every_pair() {
        let report = corpus_histograms(
            &[table1(), table2()],
            &KPolicy::Threshold(AggregationConfig::default()),
            0.0,
        );
        let total: u64 = report.histograms.values().map(|h| h.total()).sum();
        assert_eq!(total, 3 + 1);
        assert_eq!(report.combined().total(), 4);
        assert_eq!(report.pairs[0].instance_id, "table1");
    }
}
