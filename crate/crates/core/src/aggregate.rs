//! Rank-aware aggregation of several explanations into one top-k list.
//!
//! The pipeline runs in fixed stages:
//!
//! 1. `threshold_k` picks the output size from the feature-universe size.
//! 2. `strict_rank_select` walks ranks `1..=n`. At each rank the plurality
//!    feature is selected unless it is blacklisted or already selected, and
//!    every other feature seen at that rank that is not already selected is
//!    blacklisted.
//! 3. `loose_rank_extend` fires only when fewer than `k` features were
//!    selected. It restores every unselected feature at the first rank where
//!    it was the plurality, or near its mean rank if it never was.
//! 4. `strict_sign_filter` keeps candidates whose sign is unanimous.
//! 5. `loose_sign_filter` fires only when fewer than `k` survive the strict
//!    filter, and keeps candidates with a strict-majority sign class.
//! 6. `finalize` orders by consensus rank and keeps the first `k`.
//!
//! Neutral is a sign class like any other. Plurality ties are broken by the
//! smallest mean rank (absent features count as rank `n + 1`), then by
//! feature name, so results never depend on explainer order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    validate, AggregatedExplanation, AggregatedFeature, AggregationConfig, AggregationTrace,
    ExplanationSet, Finding, Mode, ModelError, RankedFeature, Severity, Sign, TieBreakRecord,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("explanation set '{instance_id}' rejected with {} finding(s)", findings.len())]
    Rejected {
        instance_id: String,
        findings: Vec<Finding>,
    },
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error(transparent)]
    Config(#[from] ModelError),
}

/// Output size for a universe of `n` features, clamped to `n`.
pub fn threshold_k(n: usize, config: &AggregationConfig) -> usize {
    let k = if n <= config.small_max {
        config.k_small
    } else if n <= config.moderate_max {
        config.k_moderate
    } else {
        config.k_large
    };
    k.min(n).max(1)
}

/// Sum of each feature's rank over all explainers, absent = `n + 1`.
///
/// Comparing sums is equivalent to comparing mean ranks since every feature
/// is summed over the same explainers.
fn rank_sums(set: &ExplanationSet) -> BTreeMap<String, usize> {
    let universe = set.universe();
    let absent = universe.len() + 1;
    let mut sums: BTreeMap<String, usize> = universe
        .iter()
        .map(|f| (f.to_string(), absent * set.explanations().len()))
        .collect();
    for e in set.explanations() {
        for (i, a) in e.attributions().iter().enumerate() {
            if let Some(sum) = sums.get_mut(&a.feature) {
                *sum = *sum - absent + i + 1;
            }
        }
    }
    sums
}

fn by_mean_rank_then_name<'a>(
    sums: &'a BTreeMap<String, usize>,
) -> impl Fn(&String, &String) -> Ordering + 'a {
    move |a, b| sums[a].cmp(&sums[b]).then_with(|| a.cmp(b))
}

/// Votes cast at one rank position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTally {
    pub rank: usize,
    pub votes: BTreeMap<String, usize>,
    pub plurality: Option<String>,
    pub minority_alternatives: BTreeSet<String>,
    /// Features sharing the top vote count when the tie-break was needed.
    pub tied: Vec<String>,
}

/// One tally per rank `1..=n`.
pub fn tally_ranks(set: &ExplanationSet) -> Vec<RankTally> {
    let n = set.n_features();
    let sums = rank_sums(set);
    let order = by_mean_rank_then_name(&sums);
    (1..=n)
        .map(|rank| {
            let mut votes: BTreeMap<String, usize> = BTreeMap::new();
            for e in set.explanations() {
                if let Some(a) = e.attributions().get(rank - 1) {
                    *votes.entry(a.feature.clone()).or_default() += 1;
                }
            }
            let top = votes.values().copied().max().unwrap_or(0);
            let mut tied: Vec<String> = votes
                .iter()
                .filter(|(_, v)| **v == top)
                .map(|(f, _)| f.clone())
                .collect();
            tied.sort_by(&order);
            let plurality = tied.first().cloned();
            let minority_alternatives = votes
                .keys()
                .filter(|f| Some(*f) != plurality.as_ref())
                .cloned()
                .collect();
            if tied.len() < 2 {
                tied.clear();
            } else {
                tied.sort();
            }
            RankTally {
                rank,
                votes,
                plurality,
                minority_alternatives,
                tied,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrictRankSelection {
    /// In selection order, i.e. ascending consensus rank.
    pub selected: Vec<RankedFeature>,
    pub blacklist: BTreeSet<String>,
    pub tallies: Vec<RankTally>,
}

impl StrictRankSelection {
    pub fn is_selected(&self, feature: &str) -> bool {
        self.selected.iter().any(|s| s.feature == feature)
    }

    pub fn tie_breaks(&self) -> Vec<TieBreakRecord> {
        self.tallies
            .iter()
            .filter(|t| !t.tied.is_empty())
            .map(|t| TieBreakRecord {
                rank: t.rank,
                tied: t.tied.clone(),
                chosen: t.plurality.clone().unwrap_or_default(),
            })
            .collect()
    }
}

pub fn strict_rank_select(set: &ExplanationSet) -> StrictRankSelection {
    let tallies = tally_ranks(set);
    let mut selected: Vec<RankedFeature> = Vec::new();
    let mut blacklist = BTreeSet::new();
    for tally in &tallies {
        let is_selected =
            |f: &str, selected: &[RankedFeature]| selected.iter().any(|s| s.feature == f);
        if let Some(p) = &tally.plurality {
            if !blacklist.contains(p) && !is_selected(p, &selected) {
                selected.push(RankedFeature {
                    feature: p.clone(),
                    consensus_rank: tally.rank,
                });
            }
        }
        for alt in &tally.minority_alternatives {
            if !is_selected(alt, &selected) {
                blacklist.insert(alt.clone());
            }
        }
    }
    StrictRankSelection {
        selected,
        blacklist,
        tallies,
    }
}

/// Restores every unselected feature when the strict selection is short.
///
/// A restored feature takes the first rank at which it was the plurality.
/// A feature that was never a plurality takes the first rank at or above
/// its rounded-up mean rank that no other candidate occupies; such features
/// are placed in order of mean rank, then name.
pub fn loose_rank_extend(
    selection: &StrictRankSelection,
    set: &ExplanationSet,
    k: usize,
) -> Vec<RankedFeature> {
    if selection.selected.len() >= k {
        return selection.selected.clone();
    }
    let mut first_plurality: BTreeMap<&str, usize> = BTreeMap::new();
    for tally in &selection.tallies {
        if let Some(p) = &tally.plurality {
            first_plurality.entry(p.as_str()).or_insert(tally.rank);
        }
    }

    let mut candidates = selection.selected.clone();
    let mut occupied: BTreeSet<usize> = candidates.iter().map(|c| c.consensus_rank).collect();
    let mut never_plurality = Vec::new();
    for feature in set.universe() {
        if selection.is_selected(feature) {
            continue;
        }
        match first_plurality.get(feature) {
            Some(&rank) => {
                occupied.insert(rank);
                candidates.push(RankedFeature {
                    feature: feature.to_string(),
                    consensus_rank: rank,
                });
            }
            None => never_plurality.push(feature.to_string()),
        }
    }

    let sums = rank_sums(set);
    let m = set.explanations().len().max(1);
    never_plurality.sort_by(by_mean_rank_then_name(&sums));
    for feature in never_plurality {
        let mut slot = sums[&feature].div_ceil(m);
        while occupied.contains(&slot) {
            slot += 1;
        }
        occupied.insert(slot);
        candidates.push(RankedFeature {
            feature,
            consensus_rank: slot,
        });
    }
    candidates.sort_by(|a, b| {
        a.consensus_rank
            .cmp(&b.consensus_rank)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    candidates
}

/// Per-explainer signs of one feature over full rankings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignProfile {
    pub feature: String,
    /// In the explainer order of the set.
    pub per_explainer_signs: Vec<Sign>,
    pub unanimous: bool,
    pub majority_sign: Option<Sign>,
}

impl SignProfile {
    pub fn count(&self, sign: Sign) -> usize {
        self.per_explainer_signs
            .iter()
            .filter(|s| **s == sign)
            .count()
    }
}

pub fn sign_profile(
    set: &ExplanationSet,
    feature: &str,
    neutral_eps: f64,
) -> Result<SignProfile, AggregateError> {
    if !set.universe().contains(feature) {
        return Err(AggregateError::UnknownFeature(feature.to_string()));
    }
    let per_explainer_signs: Vec<Sign> = set
        .explanations()
        .iter()
        .map(|e| e.sign_of(feature, neutral_eps))
        .collect();
    let total = per_explainer_signs.len();
    let majority_sign = Sign::ALL.into_iter().find(|s| {
        let c = per_explainer_signs.iter().filter(|x| *x == s).count();
        2 * c > total
    });
    let unanimous = total > 0
        && per_explainer_signs
            .iter()
            .all(|s| *s == per_explainer_signs[0]);
    Ok(SignProfile {
        feature: feature.to_string(),
        per_explainer_signs,
        unanimous,
        majority_sign,
    })
}

fn filter_by_profile(
    candidates: &[RankedFeature],
    set: &ExplanationSet,
    neutral_eps: f64,
    keep: impl Fn(&SignProfile) -> bool,
) -> Vec<RankedFeature> {
    candidates
        .iter()
        .filter(|c| {
            sign_profile(set, &c.feature, neutral_eps)
                .map(|p| keep(&p))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

/// Keeps candidates on whose sign every explainer agrees.
pub fn strict_sign_filter(
    candidates: &[RankedFeature],
    set: &ExplanationSet,
    neutral_eps: f64,
) -> Vec<RankedFeature> {
    filter_by_profile(candidates, set, neutral_eps, |p| p.unanimous)
}

/// Keeps candidates with a strict-majority sign class.
pub fn loose_sign_filter(
    candidates: &[RankedFeature],
    set: &ExplanationSet,
    neutral_eps: f64,
) -> Vec<RankedFeature> {
    filter_by_profile(candidates, set, neutral_eps, |p| p.majority_sign.is_some())
}

/// Orders survivors, truncates to `k` and attaches sign, weight and support.
pub fn finalize(
    survivors: &[RankedFeature],
    set: &ExplanationSet,
    k: usize,
    neutral_eps: f64,
    trace: AggregationTrace,
) -> AggregatedExplanation {
    let sums = rank_sums(set);
    let mut ordered: Vec<&RankedFeature> = survivors.iter().collect();
    ordered.sort_by(|a, b| {
        a.consensus_rank
            .cmp(&b.consensus_rank)
            .then_with(|| by_mean_rank_then_name(&sums)(&a.feature, &b.feature))
    });
    ordered.truncate(k);

    let explainers = set.explanations().len();
    let features = ordered
        .into_iter()
        .map(|c| {
            let signs: Vec<Sign> = set
                .explanations()
                .iter()
                .map(|e| e.sign_of(&c.feature, neutral_eps))
                .collect();
            let count = |s: Sign| signs.iter().filter(|x| **x == s).count();
            // Survivors of the sign stages always have a strict majority;
            // otherwise fall back to the most frequent class.
            let sign = Sign::ALL
                .into_iter()
                .find(|s| 2 * count(*s) > explainers)
                .unwrap_or_else(|| {
                    Sign::ALL
                        .into_iter()
                        .max_by(|a, b| count(*a).cmp(&count(*b)).then(b.cmp(a)))
                        .unwrap_or(Sign::Neutral)
                });
            let mut weights: Vec<f64> = set
                .explanations()
                .iter()
                .map(|e| e.weight_of(&c.feature).unwrap_or(0.0))
                .collect();
            // summation order must not depend on explainer order
            weights.sort_by(f64::total_cmp);
            let mean_weight = if explainers == 0 {
                0.0
            } else {
                weights.iter().sum::<f64>() / explainers as f64
            };
            AggregatedFeature {
                feature: c.feature.clone(),
                consensus_rank: c.consensus_rank,
                sign,
                mean_weight,
                support: count(sign),
            }
        })
        .collect();

    AggregatedExplanation {
        instance_id: set.instance_id().to_string(),
        features,
        trace,
    }
}

/// Runs the full staged pipeline on a validated set.
pub fn aggregate(
    set: &ExplanationSet,
    config: &AggregationConfig,
) -> Result<AggregatedExplanation, AggregateError> {
    config.check()?;
    aggregate_with_k(set, config, None)
}

/// As [`aggregate`], with an explicit output size (still clamped to `n`).
pub fn aggregate_with_k(
    set: &ExplanationSet,
    config: &AggregationConfig,
    k_override: Option<usize>,
) -> Result<AggregatedExplanation, AggregateError> {
    config.check()?;
    let findings: Vec<Finding> = validate(set)
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .collect();
    if !findings.is_empty() {
        return Err(AggregateError::Rejected {
            instance_id: set.instance_id().to_string(),
            findings,
        });
    }

    let eps = config.neutral_eps;
    let n = set.n_features();
    let k = match k_override {
        Some(k) => k.clamp(1, n),
        None => threshold_k(n, config),
    };

    let selection = strict_rank_select(set);
    let mut modes_used = Vec::new();
    let (candidates, loose_rank_set) = if selection.selected.len() < k {
        modes_used.push(Mode::LooseRank);
        let c = loose_rank_extend(&selection, set, k);
        (c.clone(), Some(c))
    } else {
        (selection.selected.clone(), None)
    };

    let strict_sign = strict_sign_filter(&candidates, set, eps);
    let (survivors, loose_sign_set) = if strict_sign.len() < k {
        modes_used.push(Mode::LooseSign);
        let s = loose_sign_filter(&candidates, set, eps);
        let names = s.iter().map(|c| c.feature.clone()).collect();
        (s, Some(names))
    } else {
        (strict_sign.clone(), None)
    };

    let mut notes = Vec::new();
    if survivors.is_empty() {
        notes.push(format!(
            "no candidate kept a {} sign; output is empty",
            if modes_used.contains(&Mode::LooseSign) {
                "majority"
            } else {
                "unanimous"
            }
        ));
    } else if survivors.len() < k {
        notes.push(format!(
            "only {} of k={} features survived the sign stages",
            survivors.len(),
            k
        ));
    }

    let trace = AggregationTrace {
        n_features: n,
        k_used: k,
        strict_rank_set: selection.selected.clone(),
        blacklist: selection.blacklist.iter().cloned().collect(),
        loose_rank_set,
        strict_sign_set: strict_sign.iter().map(|c| c.feature.clone()).collect(),
        loose_sign_set,
        modes_used,
        tie_breaks: selection.tie_breaks(),
        notes,
    };
    Ok(finalize(&survivors, set, k, eps, trace))
}
