//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when input cannot be read, parsed or
//! validated, 2 on usage errors. Machine output is one canonical
//! `xmentor/1` document per input document, one per line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregate::{aggregate_with_k, sign_profile, threshold_k};
use crate::io::{
    canonical_bytes, parse_documents, write_metrics, write_report, ExplanationDocument, IoError,
    SCHEMA_VERSION,
};
use crate::metrics::{
    corpus_histograms, named_pair_metrics, pairwise_matrix, KPolicy, Metric, PairMetrics,
};
use crate::model::{
    has_errors, validate, AggregatedExplanation, AggregationConfig, ExplanationSet, Finding,
};
use crate::synth::{generate, GeneratorSpec, Perturbation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairArg(pub String, pub String);

fn parse_pair(s: &str) -> Result<PairArg, String> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(PairArg(a.into(), b.into())),
        _ => Err(format!("expected A:B, got '{s}'")),
    }
}

fn parse_eps(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite non-negative number, got {s}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "xmentor",
    version,
    about = "Measure disagreement between feature-attribution explanations and aggregate them into one top-k explanation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input document(s): a single document, a JSON array, or one document per line
    #[arg(long, short = 'i', value_name = "PATH")]
    pub input: Vec<PathBuf>,
    /// Read one input stream from standard input
    #[arg(long, conflicts_with = "input")]
    pub stdin: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Human)]
    pub format: Format,
    /// Write to this file instead of standard output
    #[arg(long, short = 'o', value_name = "PATH", conflicts_with = "stdout")]
    pub output: Option<PathBuf>,
    /// Write to standard output (the default)
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Aggregation config as JSON; missing keys take their defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Weights with magnitude at or below this count as neutral
    #[arg(long, value_name = "EPS", value_parser = parse_eps)]
    pub neutral_eps: Option<f64>,
    /// Explicit k instead of the size-based threshold
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check documents against the schema and the set invariants
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Pairwise feature, rank and sign agreement
    Metrics {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Restrict to one explainer pair
        #[arg(long, value_name = "A:B", value_parser = parse_pair)]
        pair: Option<PairArg>,
    },
    /// Aggregate each document into one top-k explanation
    Aggregate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Include the stage trace in machine output
        #[arg(long)]
        trace: bool,
    },
    /// Write metric tables, mismatch histograms and aggregations to a directory
    Report {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (created if missing)
        #[arg(long, short = 'o', value_name = "DIR")]
        output: PathBuf,
    },
    /// Generate a seeded synthetic corpus
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        min_features: usize,
        #[arg(long, default_value_t = 10)]
        max_features: usize,
        #[arg(long, default_value_t = 3)]
        explainers: usize,
        /// independent, rank-jitter or sign-flip
        #[arg(long, default_value = "independent")]
        perturbation: Perturbation,
        #[arg(long, default_value_t = 1.0)]
        weight_scale: f64,
        #[arg(long, short = 'o', value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

/// Failure that maps onto an exit status.
#[derive(Debug)]
enum Failure {
    Data(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Data(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Data(m) | Failure::Usage(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Data(e.to_string())
    }
}

struct Input {
    name: String,
    bytes: Vec<u8>,
}

fn read_inputs(args: &InputArgs, stdin: &mut dyn Read) -> Result<Vec<Input>, Failure> {
    if args.stdin {
        let mut bytes = Vec::new();
        stdin
            .read_to_end(&mut bytes)
            .map_err(|e| Failure::Data(format!("cannot read standard input: {e}")))?;
        return Ok(vec![Input {
            name: "<stdin>".into(),
            bytes,
        }]);
    }
    if args.input.is_empty() {
        return Err(Failure::Usage(
            "no input: pass --input PATH or --stdin".into(),
        ));
    }
    args.input
        .iter()
        .map(|path| {
            fs::read(path)
                .map(|bytes| Input {
                    name: path.display().to_string(),
                    bytes,
                })
                .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
        })
        .collect()
}

fn load_sets(
    args: &InputArgs,
    stdin: &mut dyn Read,
) -> Result<Vec<(ExplanationDocument, ExplanationSet)>, Failure> {
    let mut out = Vec::new();
    for input in read_inputs(args, stdin)? {
        let docs = parse_documents(&input.bytes)
            .map_err(|e| Failure::Data(format!("{}: {e}", input.name)))?;
        for doc in docs {
            let set = doc.to_set();
            let findings = validate(&set);
            if has_errors(&findings) {
                let detail: Vec<String> = findings.iter().map(Finding::to_string).collect();
                return Err(Failure::Data(format!(
                    "{}: invalid document:\n  {}",
                    input.name,
                    detail.join("\n  ")
                )));
            }
            out.push((doc, set));
        }
    }
    Ok(out)
}

fn load_config(args: &ConfigArgs) -> Result<AggregationConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let bytes = fs::read(path)
                .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_slice::<AggregationConfig>(&bytes)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => AggregationConfig::default(),
    };
    if let Some(eps) = args.neutral_eps {
        config.neutral_eps = eps;
    }
    config.check().map_err(|e| Failure::Data(e.to_string()))?;
    Ok(config)
}

fn emit(out: &OutputArgs, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Failure> {
    match &out.output {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(bytes)
            .map_err(|e| Failure::Data(format!("cannot write output: {e}"))),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdin, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(
    command: Command,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    match command {
        Command::Validate { input, out } => run_validate(&input, &out, stdin, stdout),
        Command::Metrics {
            input,
            out,
            config,
            pair,
        } => run_metrics(&input, &out, &config, pair.as_ref(), stdin, stdout),
        Command::Aggregate {
            input,
            out,
            config,
            trace,
        } => run_aggregate(&input, &out, &config, trace, stdin, stdout),
        Command::Report {
            input,
            config,
            output,
        } => run_report(&input, &config, &output, stdin, stdout),
        Command::Synth {
            seed,
            count,
            min_features,
            max_features,
            explainers,
            perturbation,
            weight_scale,
            output,
        } => {
            let spec = GeneratorSpec {
                seed,
                min_features,
                max_features,
                n_explainers: explainers,
                perturbation,
                weight_scale,
            };
            let sets = generate(&spec, count).map_err(|e| Failure::Usage(e.to_string()))?;
            let bytes: Vec<u8> = sets
                .iter()
                .flat_map(|s| ExplanationDocument::from_set(s).to_bytes())
                .collect();
            let out = OutputArgs {
                format: Format::Machine,
                output,
                stdout: false,
            };
            emit(&out, &bytes, stdout)?;
            Ok(0)
        }
    }
}

fn run_validate(
    input: &InputArgs,
    out: &OutputArgs,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    #[derive(serde::Serialize)]
    struct Verdict<'a> {
        schema_version: &'static str,
        instance_id: &'a str,
        valid: bool,
        findings: &'a [Finding],
    }

    let mut buffer = Vec::new();
    let mut failed = false;
    for source in read_inputs(input, stdin)? {
        let docs = match parse_documents(&source.bytes) {
            Ok(docs) => docs,
            Err(e) => {
                return Err(Failure::Data(format!("{}: {e}", source.name)));
            }
        };
        for doc in docs {
            let set = doc.to_set();
            let findings = validate(&set);
            let valid = !has_errors(&findings);
            failed |= !valid;
            match out.format {
                Format::Machine => buffer.extend(canonical_bytes(&Verdict {
                    schema_version: SCHEMA_VERSION,
                    instance_id: set.instance_id(),
                    valid,
                    findings: &findings,
                })),
                Format::Human => {
                    let mut text = format!(
                        "{}: {} ({})\n",
                        source.name,
                        set.instance_id(),
                        if valid { "ok" } else { "INVALID" }
                    );
                    for f in &findings {
                        let _ = writeln!(text, "  {f}");
                    }
                    buffer.extend(text.into_bytes());
                }
            }
        }
    }
    emit(out, &buffer, stdout)?;
    Ok(if failed { 1 } else { 0 })
}

fn explainer_pairs(set: &ExplanationSet) -> Vec<(String, String)> {
    let mut names: Vec<&str> = set.explanations().iter().map(|e| e.explainer()).collect();
    names.sort();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            pairs.push((a.to_string(), b.to_string()));
        }
    }
    pairs
}

fn metrics_k(config_args: &ConfigArgs, config: &AggregationConfig, set: &ExplanationSet) -> usize {
    config_args
        .k
        .map(|k| k as usize)
        .unwrap_or_else(|| threshold_k(set.n_features(), config))
}

fn run_metrics(
    input: &InputArgs,
    out: &OutputArgs,
    config_args: &ConfigArgs,
    pair: Option<&PairArg>,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let config = load_config(config_args)?;
    let mut buffer = Vec::new();
    for (_, set) in load_sets(input, stdin)? {
        let k = metrics_k(config_args, &config, &set);
        let pairs = match pair {
            Some(PairArg(a, b)) => vec![(a.clone(), b.clone())],
            None => explainer_pairs(&set),
        };
        let mut rows: Vec<(String, String, PairMetrics)> = Vec::new();
        for (a, b) in pairs {
            let m = named_pair_metrics(&set, &a, &b, k, config.neutral_eps)
                .map_err(|e| Failure::Data(format!("{}: {e}", set.instance_id())))?;
            rows.push((a, b, m));
        }
        match out.format {
            Format::Machine => buffer.extend(write_metrics(set.instance_id(), &rows)),
            Format::Human => buffer.extend(render_metrics(&set, k, &rows, &config).into_bytes()),
        }
    }
    emit(out, &buffer, stdout)?;
    Ok(0)
}

fn render_metrics(
    set: &ExplanationSet,
    k: usize,
    rows: &[(String, String, PairMetrics)],
    config: &AggregationConfig,
) -> String {
    let mut s = format!(
        "instance {}  (n={}, k={})\n",
        set.instance_id(),
        set.n_features(),
        k
    );
    let _ = writeln!(
        s,
        "  {:<24} {:>6} {:>6} {:>6} {:>11} {:>11}",
        "pair", "FA", "RA", "SA", "k(FA-RA)", "k(FA-SA)"
    );
    for (a, b, m) in rows {
        let _ = writeln!(
            s,
            "  {:<24} {:>6.3} {:>6.3} {:>6.3} {:>11} {:>11}",
            format!("{a}:{b}"),
            m.fa,
            m.ra,
            m.sa,
            m.rank_mismatch_count,
            m.sign_mismatch_count
        );
    }
    if rows.len() > 1 {
        for metric in Metric::ALL {
            let Ok(matrix) = pairwise_matrix(set, k, metric, config.neutral_eps) else {
                continue;
            };
            let _ = writeln!(s, "  {metric} matrix");
            let _ = write!(s, "    {:<12}", "");
            for e in &matrix.explainers {
                let _ = write!(s, " {e:>10}");
            }
            s.push('\n');
            for (row, e) in matrix.values.iter().zip(&matrix.explainers) {
                let _ = write!(s, "    {e:<12}");
                for v in row {
                    let _ = write!(s, " {v:>10.3}");
                }
                s.push('\n');
            }
        }
    }
    s
}

fn run_aggregate(
    input: &InputArgs,
    out: &OutputArgs,
    config_args: &ConfigArgs,
    with_trace: bool,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let config = load_config(config_args)?;
    let mut buffer = Vec::new();
    for (doc, set) in load_sets(input, stdin)? {
        let result = aggregate_with_k(&set, &config, config_args.k.map(|k| k as usize))
            .map_err(|e| Failure::Data(e.to_string()))?;
        match out.format {
            Format::Machine => buffer.extend(doc.with_aggregation(&result, with_trace).to_bytes()),
            Format::Human => {
                buffer.extend(render_aggregation(&set, &result, config.neutral_eps).into_bytes())
            }
        }
    }
    emit(out, &buffer, stdout)?;
    Ok(0)
}

fn join_ranked(items: &[crate::model::RankedFeature]) -> String {
    items
        .iter()
        .map(|r| format!("{}@{}", r.feature, r.consensus_rank))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stage-by-stage trace followed by the final table.
pub fn render_aggregation(
    set: &ExplanationSet,
    result: &AggregatedExplanation,
    neutral_eps: f64,
) -> String {
    let t = &result.trace;
    let k = t.k_used;
    let short = |len: usize| {
        if len < k {
            format!("  ({len} < k)")
        } else {
            String::new()
        }
    };
    let mut s = format!(
        "instance {}  (n={}, k={})\n",
        result.instance_id, t.n_features, k
    );
    let _ = writeln!(
        s,
        "  strict rank   {}{}",
        join_ranked(&t.strict_rank_set),
        short(t.strict_rank_set.len())
    );
    if !t.blacklist.is_empty() {
        let _ = writeln!(s, "  blacklisted   {}", t.blacklist.join(" "));
    }
    for tb in &t.tie_breaks {
        let _ = writeln!(
            s,
            "  tie at rank {}: {} -> {}",
            tb.rank,
            tb.tied.join(", "),
            tb.chosen
        );
    }
    match &t.loose_rank_set {
        Some(c) => {
            let _ = writeln!(s, "  loose rank    {}", join_ranked(c));
        }
        None => s.push_str("  loose rank    (not needed)\n"),
    }
    let _ = writeln!(
        s,
        "  strict sign   {}{}",
        t.strict_sign_set.join(" "),
        short(t.strict_sign_set.len())
    );
    match &t.loose_sign_set {
        Some(c) => {
            let _ = writeln!(s, "  loose sign    {}", c.join(" "));
        }
        None => s.push_str("  loose sign    (not needed)\n"),
    }
    let names: Vec<&str> = result.feature_names();
    let _ = writeln!(s, "  final         {}", names.join(" "));
    for note in &t.notes {
        let _ = writeln!(s, "  note: {note}");
    }
    if !result.features.is_empty() {
        let _ = writeln!(
            s,
            "\n  {:>4}  {:<20} {:>4} {:>8} {:>12}  signs",
            "rank", "feature", "sign", "support", "mean_weight"
        );
        let m = set.explanations().len();
        for f in &result.features {
            let signs = sign_profile(set, &f.feature, neutral_eps)
                .map(|p| {
                    p.per_explainer_signs
                        .iter()
                        .map(|x| x.symbol())
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "  {:>4}  {:<20} {:>4} {:>8} {:>12.6}  {}",
                f.consensus_rank,
                f.feature,
                f.sign.symbol(),
                format!("{}/{}", f.support, m),
                f.mean_weight,
                signs
            );
        }
    }
    s
}

fn file_stem(index: usize, instance_id: &str) -> String {
    let clean: String = instance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:04}-{clean}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn run_report(
    input: &InputArgs,
    config_args: &ConfigArgs,
    dir: &Path,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let config = load_config(config_args)?;
    let mut loaded = load_sets(input, stdin)?;
    loaded.sort_by(|a, b| a.1.instance_id().cmp(b.1.instance_id()));
    let sets: Vec<ExplanationSet> = loaded.iter().map(|(_, s)| s.clone()).collect();
    let policy = match config_args.k {
        Some(k) => KPolicy::Fixed(k as usize),
        None => KPolicy::Threshold(config.clone()),
    };
    let report = corpus_histograms(&sets, &policy, config.neutral_eps);

    let agg_dir = dir.join("aggregations");
    fs::create_dir_all(&agg_dir)
        .map_err(|e| Failure::Data(format!("cannot create {}: {e}", agg_dir.display())))?;

    let mut pairs_csv = String::from(
        "instance_id,explainer_a,explainer_b,k,fa,ra,sa,rank_mismatch_count,sign_mismatch_count\n",
    );
    for p in &report.pairs {
        let m = &p.metrics;
        let _ = writeln!(
            pairs_csv,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&p.instance_id),
            csv_field(&p.explainer_a),
            csv_field(&p.explainer_b),
            m.k,
            m.fa,
            m.ra,
            m.sa,
            m.rank_mismatch_count,
            m.sign_mismatch_count
        );
    }
    write_file(&dir.join("pair_metrics.csv"), pairs_csv.as_bytes())?;

    let mut hist_csv = String::from("pair,kind,mismatch_count,frequency\n");
    for (pair, h) in &report.histograms {
        for (kind, table) in [("rank", &h.rank), ("sign", &h.sign)] {
            for (value, count) in table {
                let _ = writeln!(hist_csv, "{},{kind},{value},{count}", csv_field(pair));
            }
        }
    }
    write_file(&dir.join("histograms.csv"), hist_csv.as_bytes())?;
    write_file(&dir.join("report.json"), &write_report(&report))?;

    for (index, (doc, set)) in loaded.iter().enumerate() {
        let k = config_args.k.map(|k| k as usize);
        let result = aggregate_with_k(set, &config, k).map_err(|e| Failure::Data(e.to_string()))?;
        let bytes = doc.clone().with_aggregation(&result, true).to_bytes();
        write_file(
            &agg_dir.join(format!("{}.json", file_stem(index, set.instance_id()))),
            &bytes,
        )?;
    }

    let combined = report.combined();
    let fmt_mean = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let summary = format!(
        "{} instance(s), {} pair observation(s)\nmean k(FA-RA) = {}\nmean k(FA-SA) = {}\nwrote {}\n",
        sets.len(),
        combined.total(),
        fmt_mean(combined.mean_rank_mismatch()),
        fmt_mean(combined.mean_sign_mismatch()),
        dir.display()
    );
    stdout
        .write_all(summary.as_bytes())
        .map_err(|e| Failure::Data(e.to_string()))?;
    Ok(0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
