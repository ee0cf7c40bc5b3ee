//! Naive reference implementations used as test oracles.
//!
//! Nothing here calls into `aggregate` or `metrics`, nor into the ranking
//! helpers on `Explanation`/`ExplanationSet`. Each stage is a direct loop
//! over an explicit table of `(feature, weight)` rows, written for
//! readability rather than speed. Mean ranks are floats here, while the
//! production path compares integer rank sums.

use crate::metrics::PairMetrics;
use crate::model::Explanation;
use crate::model::{
    validate, AggregatedExplanation, AggregatedFeature, AggregationConfig, AggregationTrace,
    ExplanationSet, Finding, Mode, RankedFeature, Severity, Sign, TieBreakRecord,
};

fn sign(w: f64, eps: f64) -> Sign {
    if w.abs() <= eps {
        Sign::Neutral
    } else if w > 0.0 {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

struct Table {
    rows: Vec<Vec<(String, f64)>>,
    universe: Vec<String>,
}

impl Table {
    fn new(set: &ExplanationSet) -> Self {
        let rows: Vec<Vec<(String, f64)>> = set
            .explanations()
            .iter()
            .map(|e| {
                e.attributions()
                    .iter()
                    .map(|a| (a.feature.clone(), a.weight))
                    .collect()
            })
            .collect();
        let mut universe: Vec<String> = Vec::new();
        for row in &rows {
            for (f, _) in row {
                if !universe.contains(f) {
                    universe.push(f.clone());
                }
            }
        }
        universe.sort();
        Table { rows, universe }
    }

    fn n(&self) -> usize {
        self.universe.len()
    }

    fn position(&self, row: usize, feature: &str) -> Option<usize> {
        for (i, (f, _)) in self.rows[row].iter().enumerate() {
            if f == feature {
                return Some(i + 1);
            }
        }
        None
    }

    fn weight(&self, row: usize, feature: &str) -> Option<f64> {
        for (f, w) in &self.rows[row] {
            if f == feature {
                return Some(*w);
            }
        }
        None
    }

    fn mean_rank(&self, feature: &str) -> f64 {
        let mut total = 0.0;
        for row in 0..self.rows.len() {
            total += self.position(row, feature).unwrap_or(self.n() + 1) as f64;
        }
        total / self.rows.len() as f64
    }

    fn signs(&self, feature: &str, eps: f64) -> Vec<Sign> {
        (0..self.rows.len())
            .map(|row| match self.weight(row, feature) {
                Some(w) => sign(w, eps),
                None => Sign::Neutral,
            })
            .collect()
    }

    /// `a` before `b` under the mean-rank-then-name rule.
    fn prefer(&self, a: &str, b: &str) -> bool {
        let (ma, mb) = (self.mean_rank(a), self.mean_rank(b));
        if ma != mb {
            return ma < mb;
        }
        a < b
    }
}

fn contains(list: &[RankedFeature], feature: &str) -> bool {
    list.iter().any(|r| r.feature == feature)
}

/// Straight transliteration of the staged aggregation rules.
pub fn reference_aggregate(
    set: &ExplanationSet,
    config: &AggregationConfig,
) -> Result<AggregatedExplanation, Vec<Finding>> {
    let errors: Vec<Finding> = validate(set)
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .collect();
    if !errors.is_empty() {
        return Err(errors);
    }
    let eps = config.neutral_eps;
    let table = Table::new(set);
    let n = table.n();
    let m = table.rows.len();

    // threshold
    let mut k = if n <= config.small_max {
        config.k_small
    } else if n <= config.moderate_max {
        config.k_moderate
    } else {
        config.k_large
    };
    if k > n {
        k = n;
    }

    // per-rank pluralities
    let mut plurality_at: Vec<Option<String>> = vec![None; n + 1];
    let mut others_at: Vec<Vec<String>> = vec![Vec::new(); n + 1];
    let mut tie_breaks = Vec::new();
    for rank in 1..=n {
        let mut names: Vec<String> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for row in &table.rows {
            if rank <= row.len() {
                let f = &row[rank - 1].0;
                match names.iter().position(|x| x == f) {
                    Some(i) => counts[i] += 1,
                    None => {
                        names.push(f.clone());
                        counts.push(1);
                    }
                }
            }
        }
        if names.is_empty() {
            continue;
        }
        let best = *counts.iter().max().unwrap();
        let mut tied: Vec<String> = Vec::new();
        for (i, f) in names.iter().enumerate() {
            if counts[i] == best {
                tied.push(f.clone());
            }
        }
        let mut winner = tied[0].clone();
        for f in &tied[1..] {
            if table.prefer(f, &winner) {
                winner = f.clone();
            }
        }
        if tied.len() > 1 {
            tied.sort();
            tie_breaks.push(TieBreakRecord {
                rank,
                tied,
                chosen: winner.clone(),
            });
        }
        for f in &names {
            if *f != winner {
                others_at[rank].push(f.clone());
            }
        }
        plurality_at[rank] = Some(winner);
    }

    // strict rank
    let mut selected: Vec<RankedFeature> = Vec::new();
    let mut blacklist: Vec<String> = Vec::new();
    for rank in 1..=n {
        if let Some(p) = &plurality_at[rank] {
            if !blacklist.contains(p) && !contains(&selected, p) {
                selected.push(RankedFeature {
                    feature: p.clone(),
                    consensus_rank: rank,
                });
            }
        }
        for f in &others_at[rank] {
            if !contains(&selected, f) && !blacklist.contains(f) {
                blacklist.push(f.clone());
            }
        }
    }
    blacklist.sort();

    // loose rank
    let mut modes = Vec::new();
    let candidates: Vec<RankedFeature>;
    let mut loose_rank_set = None;
    if selected.len() < k {
        modes.push(Mode::LooseRank);
        let mut all = selected.clone();
        let mut leftovers: Vec<String> = Vec::new();
        for f in &table.universe {
            if contains(&selected, f) {
                continue;
            }
            let mut first = None;
            for (rank, p) in plurality_at.iter().enumerate().skip(1) {
                if p.as_deref() == Some(f.as_str()) {
                    first = Some(rank);
                    break;
                }
            }
            match first {
                Some(rank) => all.push(RankedFeature {
                    feature: f.clone(),
                    consensus_rank: rank,
                }),
                None => leftovers.push(f.clone()),
            }
        }
        // insertion sort by preference
        let mut ordered: Vec<String> = Vec::new();
        for f in leftovers {
            let mut at = ordered.len();
            for (i, g) in ordered.iter().enumerate() {
                if table.prefer(&f, g) {
                    at = i;
                    break;
                }
            }
            ordered.insert(at, f);
        }
        for f in ordered {
            let mut slot = table.mean_rank(&f).ceil() as usize;
            while all.iter().any(|r| r.consensus_rank == slot) {
                slot += 1;
            }
            all.push(RankedFeature {
                feature: f,
                consensus_rank: slot,
            });
        }
        all.sort_by_key(|r| r.consensus_rank);
        loose_rank_set = Some(all.clone());
        candidates = all;
    } else {
        candidates = selected.clone();
    }

    // sign stages
    let mut strict_sign: Vec<RankedFeature> = Vec::new();
    let mut loose_sign: Vec<RankedFeature> = Vec::new();
    for c in &candidates {
        let signs = table.signs(&c.feature, eps);
        if signs.iter().all(|s| *s == signs[0]) {
            strict_sign.push(c.clone());
        }
        for s in Sign::ALL {
            if signs.iter().filter(|x| **x == s).count() * 2 > m {
                loose_sign.push(c.clone());
                break;
            }
        }
    }
    let survivors;
    let mut loose_sign_set = None;
    if strict_sign.len() < k {
        modes.push(Mode::LooseSign);
        loose_sign_set = Some(loose_sign.iter().map(|c| c.feature.clone()).collect());
        survivors = loose_sign;
    } else {
        survivors = strict_sign.clone();
    }

    // final trim; consensus ranks are already distinct
    let mut ordered = survivors.clone();
    ordered.sort_by_key(|r| r.consensus_rank);
    ordered.truncate(k);
    let mut features = Vec::new();
    for c in &ordered {
        let signs = table.signs(&c.feature, eps);
        let mut majority = Sign::Neutral;
        for s in Sign::ALL {
            if signs.iter().filter(|x| **x == s).count() * 2 > m {
                majority = s;
            }
        }
        let mut weights: Vec<f64> = (0..m)
            .map(|row| table.weight(row, &c.feature).unwrap_or(0.0))
            .collect();
        weights.sort_by(f64::total_cmp);
        let mut total = 0.0;
        for w in &weights {
            total += w;
        }
        features.push(AggregatedFeature {
            feature: c.feature.clone(),
            consensus_rank: c.consensus_rank,
            sign: majority,
            mean_weight: total / m as f64,
            support: signs.iter().filter(|s| **s == majority).count(),
        });
    }

    let mut notes = Vec::new();
    if survivors.is_empty() {
        let kind = if modes.contains(&Mode::LooseSign) {
            "majority"
        } else {
            "unanimous"
        };
        notes.push(format!("no candidate kept a {kind} sign; output is empty"));
    } else if survivors.len() < k {
        notes.push(format!(
            "only {} of k={} features survived the sign stages",
            survivors.len(),
            k
        ));
    }

    Ok(AggregatedExplanation {
        instance_id: set.instance_id().to_string(),
        features,
        trace: AggregationTrace {
            n_features: n,
            k_used: k,
            strict_rank_set: selected,
            blacklist,
            loose_rank_set,
            strict_sign_set: strict_sign.into_iter().map(|c| c.feature).collect(),
            loose_sign_set,
            modes_used: modes,
            tie_breaks,
            notes,
        },
    })
}

/// FA, RA, SA and both mismatch counts by explicit enumeration.
pub fn reference_metrics(e1: &Explanation, e2: &Explanation, k: usize) -> PairMetrics {
    reference_metrics_with_eps(e1, e2, k, 0.0)
}

pub fn reference_metrics_with_eps(
    e1: &Explanation,
    e2: &Explanation,
    k: usize,
    eps: f64,
) -> PairMetrics {
    let mut top1: Vec<(String, f64, usize)> = Vec::new();
    for (i, a) in e1.attributions().iter().enumerate() {
        if i < k {
            top1.push((a.feature.clone(), a.weight, i + 1));
        }
    }
    let mut top2: Vec<(String, f64, usize)> = Vec::new();
    for (i, a) in e2.attributions().iter().enumerate() {
        if i < k {
            top2.push((a.feature.clone(), a.weight, i + 1));
        }
    }
    let mut shared = 0;
    let mut same_rank = 0;
    let mut same_sign = 0;
    for (f1, w1, r1) in &top1 {
        for (f2, w2, r2) in &top2 {
            if f1 == f2 {
                shared += 1;
                if r1 == r2 {
                    same_rank += 1;
                }
                if sign(*w1, eps) == sign(*w2, eps) {
                    same_sign += 1;
                }
            }
        }
    }
    let fa = shared as f64 / k as f64;
    let ra = same_rank as f64 / k as f64;
    let sa = same_sign as f64 / k as f64;
    PairMetrics {
        k,
        fa,
        ra,
        sa,
        rank_mismatch_count: (k as f64 * (fa - ra)).round() as usize,
        sign_mismatch_count: (k as f64 * (fa - sa)).round() as usize,
    }
}
