//! Acceptance gate. Runs each criterion, prints one PASS/FAIL line per
//! criterion, and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use xmentor::aggregate::{aggregate, threshold_k};
use xmentor::fixtures::{table1, table2};
use xmentor::io::{parse_document, write_aggregation, ExplanationDocument};
use xmentor::metrics::{corpus_histograms, pair_metrics, KPolicy};
use xmentor::model::{AggregationConfig, ExplanationSet, Mode, RankedFeature};
use xmentor::oracle::{reference_aggregate, reference_metrics};
use xmentor::synth::{generate, GeneratorSpec, Perturbation, Source};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn names(v: &[RankedFeature]) -> Vec<&str> {
    v.iter().map(|r| r.feature.as_str()).collect()
}

/// Worked example on the three-explainer, seven-feature table.
fn ac1_table1_golden_trace() -> Outcome {
    let start = Instant::now();
    let set = table1();
    let config = AggregationConfig::default();
    let k = threshold_k(set.n_features(), &config);
    ensure(k == 5, || format!("threshold k = {k}, expected 5"))?;
    let out = aggregate(&set, &config).map_err(|e| e.to_string())?;
    let t = &out.trace;

    ensure(
        names(&t.strict_rank_set) == ["F1", "F3", "F5", "F4"],
        || format!("strict rank {:?}", names(&t.strict_rank_set)),
    )?;
    let loose = t
        .loose_rank_set
        .as_deref()
        .ok_or("loose rank did not fire")?;
    let restored: BTreeSet<&str> = names(loose)
        .into_iter()
        .filter(|f| !names(&t.strict_rank_set).contains(f))
        .collect();
    ensure(restored == BTreeSet::from(["F2", "F6", "F7"]), || {
        format!("loose rank restored {restored:?}")
    })?;
    ensure(t.strict_sign_set == ["F1", "F5", "F7"], || {
        format!("strict sign {:?}", t.strict_sign_set)
    })?;
    let loose_sign = t.loose_sign_set.as_ref().ok_or("loose sign did not fire")?;
    ensure(loose_sign.len() == 6, || {
        format!("loose sign {loose_sign:?}")
    })?;
    for f in ["F3", "F2", "F6"] {
        ensure(loose_sign.iter().any(|x| x == f), || {
            format!("loose sign missing {f}: {loose_sign:?}")
        })?;
    }
    ensure(
        out.feature_names() == ["F1", "F3", "F2", "F5", "F6"],
        || format!("final {:?}", out.feature_names()),
    )?;
    ensure(t.modes_used == [Mode::LooseRank, Mode::LooseSign], || {
        format!("modes {:?}", t.modes_used)
    })?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "final {:?} in {:?}",
        out.feature_names(),
        start.elapsed()
    ))
}

/// LIME/SHAP comparison at k = 5.
fn ac2_table2_metrics() -> Outcome {
    // hand count straight from the table rows: (feature, LIME rank, LIME w, SHAP rank, SHAP w)
    let rows = [
        ("CountLine", 1, 0.24, 1, 0.22),
        ("CountPath_Max", 2, 0.09, 3, 0.08),
        ("CountPath_Mean", 3, 0.07, 4, -0.03),
        ("Added_lines", 4, 0.06, 5, 0.01),
        ("Del_lines", 5, 0.06, 2, 0.14),
    ];
    let k = 5;
    let shared = rows.iter().filter(|r| r.1 <= k && r.3 <= k).count();
    let same_rank = rows.iter().filter(|r| r.1 == r.3).count();
    let same_sign = rows.iter().filter(|r| (r.2 > 0.0) == (r.4 > 0.0)).count();
    ensure((shared, same_rank, same_sign) == (5, 1, 4), || {
        format!("hand count {shared}/{same_rank}/{same_sign}")
    })?;

    let set = table2();
    let e = set.explanations();
    let m = pair_metrics(&e[0], &e[1], k, 0.0);
    ensure(m.fa == 1.0, || format!("FA {}", m.fa))?;
    ensure(m.ra == 0.2, || format!("RA {}", m.ra))?;
    ensure(m.sa == 0.8, || format!("SA {}", m.sa))?;
    ensure(
        (m.rank_mismatch_count, m.sign_mismatch_count) == (4, 1),
        || {
            format!(
                "counts ({}, {})",
                m.rank_mismatch_count, m.sign_mismatch_count
            )
        },
    )?;
    Ok(format!(
        "FA {} RA {} SA {} counts ({}, {})",
        m.fa, m.ra, m.sa, m.rank_mismatch_count, m.sign_mismatch_count
    ))
}

/// Production paths agree with the naive reference on small random sets.
fn ac3_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let config = AggregationConfig::default();
    let mut sets = Vec::new();
    for (seed, perturbation) in [
        (11, Perturbation::IndependentRandom),
        (12, Perturbation::IndependentRandom),
        (13, Perturbation::RankJitterSignPreserving),
        (14, Perturbation::SignFlipRankPreserving),
    ] {
        let spec = GeneratorSpec {
            seed,
            min_features: 1,
            max_features: 6,
            n_explainers: 3,
            perturbation,
            weight_scale: 1.0,
        };
        sets.extend(generate(&spec, 300).map_err(|e| e.to_string())?);
    }
    let mut metric_checks = 0usize;
    for set in &sets {
        let ours = aggregate(set, &config).map_err(|e| e.to_string())?;
        let reference = reference_aggregate(set, &config).map_err(|f| format!("{f:?}"))?;
        ensure(ours == reference, || {
            format!(
                "{}: aggregate {:?} vs reference {:?}",
                set.instance_id(),
                ours,
                reference
            )
        })?;
        let e = set.explanations();
        for i in 0..e.len() {
            for j in 0..e.len() {
                for k in 1..=set.n_features() + 1 {
                    let a = pair_metrics(&e[i], &e[j], k, 0.0);
                    let b = reference_metrics(&e[i], &e[j], k);
                    ensure(a == b, || {
                        format!("{} k={k}: {a:?} vs {b:?}", set.instance_id())
                    })?;
                    metric_checks += 1;
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} sets, {} metric comparisons, 0 mismatches in {:?}",
        sets.len(),
        metric_checks,
        start.elapsed()
    ))
}

fn shuffled(set: &ExplanationSet, src: &mut Source) -> ExplanationSet {
    let mut e = set.explanations().to_vec();
    src.shuffle(&mut e);
    set.with_explanations(e)
}

fn scaled(set: &ExplanationSet, src: &mut Source) -> ExplanationSet {
    let e = set
        .explanations()
        .iter()
        .map(|x| x.scaled(0.01 + 100.0 * src.unit()))
        .collect();
    set.with_explanations(e)
}

fn check_properties(set: &ExplanationSet, src: &mut Source) -> Result<(), String> {
    let config = AggregationConfig::default();
    let id = set.instance_id();
    let n = set.n_features();
    let k = threshold_k(n, &config);
    let out = aggregate(set, &config).map_err(|e| e.to_string())?;
    let t = &out.trace;

    // determinism, including the serialized form
    let again = aggregate(set, &config).map_err(|e| e.to_string())?;
    ensure(again == out, || format!("{id}: non-deterministic"))?;
    ensure(
        write_aggregation(&again, true) == write_aggregation(&out, true),
        || format!("{id}: serialized output differs"),
    )?;

    ensure(out.features.len() <= k, || {
        format!("{id}: {} > k={k}", out.features.len())
    })?;
    let universe = set.universe();
    ensure(
        out.features
            .iter()
            .all(|f| universe.contains(f.feature.as_str())),
        || format!("{id}: feature outside universe"),
    )?;
    ensure(
        out.features
            .windows(2)
            .all(|w| w[0].consensus_rank < w[1].consensus_rank),
        || format!("{id}: consensus ranks not strictly ascending"),
    )?;

    // stage gates and subset laws
    let fired_rank = t.modes_used.contains(&Mode::LooseRank);
    let fired_sign = t.modes_used.contains(&Mode::LooseSign);
    ensure(fired_rank == (t.strict_rank_set.len() < k), || {
        format!("{id}: loose rank gate")
    })?;
    ensure(fired_sign == (t.strict_sign_set.len() < k), || {
        format!("{id}: loose sign gate")
    })?;
    if let Some(loose) = &t.loose_rank_set {
        ensure(t.strict_rank_set.iter().all(|s| loose.contains(s)), || {
            format!("{id}: strict rank not subset of loose rank")
        })?;
    }
    if let Some(loose) = &t.loose_sign_set {
        ensure(t.strict_sign_set.iter().all(|s| loose.contains(s)), || {
            format!("{id}: strict sign not subset of loose sign")
        })?;
    }

    // explainer order does not matter
    let permuted = shuffled(set, src);
    let p_out = aggregate(&permuted, &config).map_err(|e| e.to_string())?;
    ensure(p_out == out, || {
        format!("{id}: explainer order changed the result")
    })?;

    // positive scaling keeps set, order and signs
    let scaled_set = scaled(set, src);
    let s_out = aggregate(&scaled_set, &config).map_err(|e| e.to_string())?;
    let shape = |o: &xmentor::AggregatedExplanation| {
        o.features
            .iter()
            .map(|f| (f.feature.clone(), f.consensus_rank, f.sign))
            .collect::<Vec<_>>()
    };
    ensure(shape(&s_out) == shape(&out), || {
        format!("{id}: scaling changed the aggregation")
    })?;

    // metrics: bounds, symmetry, scale invariance
    let e = set.explanations();
    let es = scaled_set.explanations();
    let extra_k = src.int(1, n + 2);
    for i in 0..e.len() {
        for j in 0..e.len() {
            for kk in [k, extra_k] {
                let m = pair_metrics(&e[i], &e[j], kk, 0.0);
                ensure(
                    0.0 <= m.ra && m.ra <= m.fa && m.fa <= 1.0 && 0.0 <= m.sa && m.sa <= m.fa,
                    || format!("{id}: bounds {m:?}"),
                )?;
                let back = pair_metrics(&e[j], &e[i], kk, 0.0);
                ensure(back == m, || format!("{id}: asymmetric {m:?} vs {back:?}"))?;
                let sc = pair_metrics(&es[i], &es[j], kk, 0.0);
                ensure(sc == m, || format!("{id}: scaling changed metrics"))?;
                for v in [m.fa, m.ra, m.sa] {
                    let x = v * kk as f64;
                    ensure((x - x.round()).abs() < 1e-9, || {
                        format!("{id}: k*metric {x} not integral")
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// Invariants over 10,000 generated sets with 3 to 30 features.
fn ac4_property_suite() -> Outcome {
    let start = Instant::now();
    let mut src = Source::new(0xAC4);
    let mut cases = 0usize;
    let plan = [
        (41, Perturbation::IndependentRandom, 3, 4000),
        (42, Perturbation::IndependentRandom, 2, 1000),
        (43, Perturbation::IndependentRandom, 4, 1000),
        (44, Perturbation::RankJitterSignPreserving, 3, 2000),
        (45, Perturbation::SignFlipRankPreserving, 3, 2000),
    ];
    for (seed, perturbation, explainers, count) in plan {
        let spec = GeneratorSpec {
            seed,
            min_features: 3,
            max_features: 30,
            n_explainers: explainers,
            perturbation,
            weight_scale: 1.0,
        };
        for set in generate(&spec, count).map_err(|e| e.to_string())? {
            check_properties(&set, &mut src)?;
            cases += 1;
        }
    }
    ensure(cases >= 10_000, || format!("only {cases} cases"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{cases} cases, 0 violations in {:?}",
        start.elapsed()
    ))
}

/// Sign-flip corpora never disagree on rank; rank-jitter corpora never on sign.
fn ac5_generator_regime_laws() -> Outcome {
    let mut summary = Vec::new();
    for (perturbation, seed) in [
        (Perturbation::SignFlipRankPreserving, 51),
        (Perturbation::RankJitterSignPreserving, 52),
    ] {
        let spec = GeneratorSpec {
            seed,
            min_features: 3,
            max_features: 30,
            n_explainers: 3,
            perturbation,
            weight_scale: 1.0,
        };
        let corpus = generate(&spec, 500).map_err(|e| e.to_string())?;
        let mut policies = vec![KPolicy::Threshold(AggregationConfig::default())];
        policies.extend((1..=30).map(KPolicy::Fixed));
        let mut other_mass = 0u64;
        for policy in &policies {
            let report = corpus_histograms(&corpus, policy, 0.0);
            let combined = report.combined();
            let (zero_side, other_side) = match perturbation {
                Perturbation::SignFlipRankPreserving => (&combined.rank, &combined.sign),
                _ => (&combined.sign, &combined.rank),
            };
            ensure(zero_side.keys().all(|v| *v == 0), || {
                format!("{perturbation} {policy:?}: {zero_side:?}")
            })?;
            ensure(combined.total() == 500 * 3, || {
                format!("histogram mass {}", combined.total())
            })?;
            other_mass += other_side
                .iter()
                .filter(|(v, _)| **v > 0)
                .map(|(_, c)| c)
                .sum::<u64>();
        }
        ensure(other_mass > 0, || {
            format!("{perturbation}: the free dimension never disagreed")
        })?;
        summary.push(format!(
            "{perturbation}: nonzero mass on free side {other_mass}"
        ));
    }
    Ok(summary.join("; "))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xmentor"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

/// Machine output is byte-stable and matches the human rendering.
fn ac6_cli_snapshot() -> Outcome {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let t1 = root.join("fixtures/table1.xm.json");
    let t2 = root.join("fixtures/table2.xm.json");
    let (t1, t2) = (t1.to_str().unwrap(), t2.to_str().unwrap());

    let cases: [(&[&str], &str); 2] = [
        (
            &["aggregate", "--input", t1, "--format", "machine", "--trace"],
            "tests/snapshots/aggregate_table1.json",
        ),
        (
            &[
                "metrics",
                "--input",
                t2,
                "--k",
                "5",
                "--pair",
                "LIME:SHAP",
                "--format",
                "machine",
            ],
            "tests/snapshots/metrics_table2.json",
        ),
    ];
    for (args, snapshot) in cases {
        let first = run_cli(args)?;
        let second = run_cli(args)?;
        ensure(first == second, || format!("{args:?}: runs differ"))?;
        let expected = std::fs::read(root.join(snapshot)).map_err(|e| e.to_string())?;
        ensure(first == expected, || {
            format!("{snapshot} differs:\n{}", String::from_utf8_lossy(&first))
        })?;
    }

    // machine bytes equal an in-process recomputation
    let bytes = std::fs::read(t1).map_err(|e| e.to_string())?;
    let set = parse_document(&bytes).map_err(|e| e.to_string())?;
    let result = aggregate(&set, &AggregationConfig::default()).map_err(|e| e.to_string())?;
    let doc = xmentor::io::parse_documents(&bytes)
        .map_err(|e| e.to_string())?
        .remove(0);
    let recomputed = doc.with_aggregation(&result, true).to_bytes();
    let machine = run_cli(&["aggregate", "--input", t1, "--format", "machine", "--trace"])?;
    ensure(recomputed == machine, || {
        "library recomputation differs".into()
    })?;
    let _ = ExplanationDocument::from_set(&set);

    // human mode renders the same final list
    let human = String::from_utf8(run_cli(&["aggregate", "--input", t1])?).unwrap();
    let final_line = human
        .lines()
        .find(|l| l.trim_start().starts_with("final"))
        .ok_or("no final line in human output")?;
    let listed: Vec<&str> = final_line.split_whitespace().skip(1).collect();
    ensure(listed == result.feature_names(), || {
        format!("human final {listed:?}")
    })?;
    let human_metrics = String::from_utf8(run_cli(&[
        "metrics",
        "--input",
        t2,
        "--k",
        "5",
        "--pair",
        "LIME:SHAP",
    ])?)
    .unwrap();
    ensure(
        human_metrics.contains("1.000  0.200  0.800           4           1"),
        || format!("human metrics:\n{human_metrics}"),
    )?;
    Ok("aggregate/metrics snapshots stable across runs and modes".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("AC1", "table 1 golden trace", ac1_table1_golden_trace),
        ("AC2", "table 2 metrics", ac2_table2_metrics),
        ("AC3", "oracle equivalence", ac3_oracle_equivalence),
        ("AC4", "property suite", ac4_property_suite),
        ("AC5", "generator regime laws", ac5_generator_regime_laws),
        ("AC6", "cli snapshot", ac6_cli_snapshot),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failed,
        failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
