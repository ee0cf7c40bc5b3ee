//! The `xmentor/1` interchange format and CSV import.
//!
//! A document is a JSON object:
//!
//! ```json
//! {
//!   "schema_version": "xmentor/1",
//!   "instance_id": "commit-1f3a:src/parser.c",
//!   "prediction": {"label": "Defect", "score": 0.91},
//!   "explanations": [
//!     {"explainer": "LIME", "attributions": [{"feature": "CountLine", "weight": 0.24}]}
//!   ]
//! }
//! ```
//!
//! A corpus is either a JSON array of documents or newline-delimited
//! documents. Aggregation output adds `k`, `features` and an optional
//! `trace`. Fields the engine does not know about are kept and written back.
//! Output is canonical: object keys sorted, shortest round-trip number
//! formatting, one document per line.

use std::collections::{BTreeMap, HashMap};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::{DisagreementReport, PairMetrics};
use crate::model::{
    has_errors, validate, AggregatedExplanation, AggregatedFeature, AggregationTrace, Explanation,
    ExplanationSet, FeatureAttribution, Finding, Prediction,
};

pub const SCHEMA_VERSION: &str = "xmentor/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("syntax error at line {line}, column {column} (byte {offset}): {message}")]
    Syntax {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("schema violation at '{path}': {message}")]
    SchemaViolation { path: String, message: String },
    #[error("unsupported schema_version '{0}', expected '{SCHEMA_VERSION}'")]
    UnsupportedVersion(String),
    #[error("document '{instance_id}' failed validation: {}", summarize(findings))]
    Invalid {
        instance_id: String,
        findings: Vec<Finding>,
    },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("duplicate record on line {line}: instance '{instance_id}', explainer '{explainer}', feature '{feature}'")]
    DuplicateRecord {
        line: u64,
        instance_id: String,
        explainer: String,
        feature: String,
    },
    #[error("bad value on line {line}, column '{column}': {message}")]
    BadValue {
        line: u64,
        column: String,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn summarize(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| f.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

fn deserialize_weight<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Number(w) if w.is_finite() => Ok(w),
        Raw::Number(w) => Err(de::Error::custom(format!("non-finite weight {w}"))),
        Raw::Text(t) => match t.trim().parse::<f64>() {
            Ok(w) if !w.is_finite() => Err(de::Error::custom(format!("non-finite weight {t:?}"))),
            _ => Err(de::Error::custom(format!(
                "weight must be a JSON number, found string {t:?}"
            ))),
        },
    }
}

type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub feature: String,
    #[serde(deserialize_with = "deserialize_weight")]
    pub weight: f64,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub explainer: String,
    pub attributions: Vec<AttributionRecord>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(flatten)]
    pub extra: Extra,
}

/// The aggregation block of an output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRecord {
    pub k: usize,
    pub features: Vec<AggregatedFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<AggregationTrace>,
}

/// One `xmentor/1` document, with unknown fields preserved at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub schema_version: String,
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<ExplanationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<AggregatedFeature>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<AggregationTrace>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ExplanationDocument {
    pub fn from_set(set: &ExplanationSet) -> Self {
        let prediction = set.prediction();
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            instance_id: set.instance_id().to_string(),
            prediction: Some(PredictionRecord {
                label: prediction.label.clone(),
                score: prediction.score,
                extra: Extra::new(),
            }),
            explanations: set
                .explanations()
                .iter()
                .map(|e| ExplanationRecord {
                    explainer: e.explainer().to_string(),
                    attributions: e
                        .attributions()
                        .iter()
                        .map(|a| AttributionRecord {
                            feature: a.feature.clone(),
                            weight: a.weight,
                            extra: Extra::new(),
                        })
                        .collect(),
                    extra: Extra::new(),
                })
                .collect(),
            k: None,
            features: None,
            trace: None,
            extra: Extra::new(),
        }
    }

    /// The explanation set carried by this document, without validation.
    pub fn to_set(&self) -> ExplanationSet {
        let prediction = self
            .prediction
            .as_ref()
            .map(|p| Prediction::new(p.label.clone(), p.score))
            .unwrap_or_else(|| Prediction::new("", None));
        ExplanationSet::new(
            self.instance_id.clone(),
            prediction,
            self.explanations
                .iter()
                .map(|e| {
                    Explanation::new(
                        e.explainer.clone(),
                        e.attributions
                            .iter()
                            .map(|a| FeatureAttribution::new(a.feature.clone(), a.weight))
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn with_aggregation(mut self, result: &AggregatedExplanation, with_trace: bool) -> Self {
        self.k = Some(result.trace.k_used);
        self.features = Some(result.features.clone());
        self.trace = with_trace.then(|| result.trace.clone());
        self
    }

    pub fn aggregation(&self) -> Option<AggregationRecord> {
        Some(AggregationRecord {
            k: self.k?,
            features: self.features.clone()?,
            trace: self.trace.clone(),
        })
    }

    /// Canonical bytes: sorted keys, newline-terminated.
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_bytes(self)
    }
}

/// Serializes any value as one canonical JSON line.
pub fn canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json::Value keeps object keys in a BTreeMap, so this sorts them
    let value = serde_json::to_value(value).expect("serializable value");
    let mut out = serde_json::to_vec(&value).expect("serializable value");
    out.push(b'\n');
    out
}

fn syntax_error(err: &serde_json::Error, bytes: &[u8]) -> IoError {
    let line = err.line();
    let column = err.column();
    let offset = byte_offset(bytes, line, column);
    IoError::Syntax {
        line,
        column,
        offset,
        message: err.to_string(),
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            return (i + column.saturating_sub(1)).min(bytes.len());
        }
        if *b == b'\n' {
            current += 1;
        }
    }
    bytes.len()
}

fn document_from_value(value: Value, path_prefix: &str) -> Result<ExplanationDocument, IoError> {
    if let Some(version) = value.get("schema_version") {
        match version.as_str() {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(IoError::UnsupportedVersion(other.to_string())),
            None => {
                return Err(IoError::SchemaViolation {
                    path: format!("{path_prefix}schema_version"),
                    message: "expected a string".into(),
                })
            }
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        IoError::SchemaViolation {
            path: format!("{path_prefix}{path}"),
            message: e.into_inner().to_string(),
        }
    })
}

/// Parses every document in `bytes` (single object, array, or one object
/// per line) without semantic validation.
pub fn parse_documents(bytes: &[u8]) -> Result<Vec<ExplanationDocument>, IoError> {
    let mut values = Vec::new();
    let stream = serde_json::Deserializer::from_slice(bytes).into_iter::<Value>();
    for item in stream {
        let value = item.map_err(|e| syntax_error(&e, bytes))?;
        match value {
            Value::Array(items) => values.extend(items),
            other => values.push(other),
        }
    }
    if values.is_empty() {
        return Err(IoError::Syntax {
            line: 1,
            column: 0,
            offset: 0,
            message: "empty input: expected an xmentor/1 document".into(),
        });
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let prefix = if i == 0 {
                String::new()
            } else {
                format!("[{i}].")
            };
            document_from_value(v, &prefix)
        })
        .collect()
}

fn check(doc: &ExplanationDocument) -> Result<ExplanationSet, IoError> {
    let set = doc.to_set();
    let findings = validate(&set);
    if has_errors(&findings) {
        return Err(IoError::Invalid {
            instance_id: set.instance_id().to_string(),
            findings,
        });
    }
    Ok(set)
}

/// Parses and validates a single document.
pub fn parse_document(bytes: &[u8]) -> Result<ExplanationSet, IoError> {
    let docs = parse_documents(bytes)?;
    if docs.len() != 1 {
        return Err(IoError::SchemaViolation {
            path: String::new(),
            message: format!("expected one document, found {}", docs.len()),
        });
    }
    check(&docs[0])
}

/// Parses and validates every document of a corpus.
pub fn parse_corpus(bytes: &[u8]) -> Result<Vec<ExplanationSet>, IoError> {
    parse_documents(bytes)?.iter().map(check).collect()
}

/// Canonical aggregation document for `result` alone.
pub fn write_aggregation(result: &AggregatedExplanation, with_trace: bool) -> Vec<u8> {
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: &'static str,
        instance_id: &'a str,
        #[serde(flatten)]
        aggregation: AggregationRecord,
    }
    canonical_bytes(&Out {
        schema_version: SCHEMA_VERSION,
        instance_id: &result.instance_id,
        aggregation: AggregationRecord {
            k: result.trace.k_used,
            features: result.features.clone(),
            trace: with_trace.then(|| result.trace.clone()),
        },
    })
}

/// Reads the aggregation block back out of an output document.
pub fn parse_aggregation(bytes: &[u8]) -> Result<(String, AggregationRecord), IoError> {
    let docs = parse_documents(bytes)?;
    let doc = docs.into_iter().next().expect("non-empty");
    let record = doc.aggregation().ok_or_else(|| IoError::SchemaViolation {
        path: "features".into(),
        message: "document carries no aggregation".into(),
    })?;
    Ok((doc.instance_id, record))
}

/// Canonical document for the metrics of one instance.
pub fn write_metrics(instance_id: &str, pairs: &[(String, String, PairMetrics)]) -> Vec<u8> {
    #[derive(Serialize)]
    struct Pair<'a> {
        explainer_a: &'a str,
        explainer_b: &'a str,
        #[serde(flatten)]
        metrics: &'a PairMetrics,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: &'static str,
        instance_id: &'a str,
        pairs: Vec<Pair<'a>>,
    }
    canonical_bytes(&Out {
        schema_version: SCHEMA_VERSION,
        instance_id,
        pairs: pairs
            .iter()
            .map(|(a, b, m)| Pair {
                explainer_a: a,
                explainer_b: b,
                metrics: m,
            })
            .collect(),
    })
}

/// Canonical corpus-level disagreement report.
pub fn write_report(report: &DisagreementReport) -> Vec<u8> {
    #[derive(Serialize)]
    struct Summary {
        observations: u64,
        mean_rank_mismatch: Option<f64>,
        mean_sign_mismatch: Option<f64>,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: &'static str,
        #[serde(flatten)]
        report: &'a DisagreementReport,
        summary: Summary,
    }
    let combined = report.combined();
    canonical_bytes(&Out {
        schema_version: SCHEMA_VERSION,
        report,
        summary: Summary {
            observations: combined.total(),
            mean_rank_mismatch: combined.mean_rank_mismatch(),
            mean_sign_mismatch: combined.mean_sign_mismatch(),
        },
    })
}

/// Column names for [`import_table`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableLayout {
    pub instance: String,
    pub explainer: String,
    pub feature: String,
    pub weight: String,
    pub label: Option<String>,
    pub score: Option<String>,
}

impl Default for TableLayout {
    fn default() -> Self {
        Self {
            instance: "instance_id".into(),
            explainer: "explainer".into(),
            feature: "feature".into(),
            weight: "weight".into(),
            label: None,
            score: None,
        }
    }
}

/// Label used when the layout names no label column.
pub const UNLABELED: &str = "unlabeled";

/// Builds one explanation set per instance from long-format rows.
///
/// Sets come back in ascending instance id; explainers keep their order of
/// first appearance; attributions are sorted by descending `|weight|` with
/// row order breaking ties. Sets are not validated.
pub fn import_table(
    csv_bytes: &[u8],
    layout: &TableLayout,
) -> Result<Vec<ExplanationSet>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn(name.to_string()))
    };
    let instance_col = column(&layout.instance)?;
    let explainer_col = column(&layout.explainer)?;
    let feature_col = column(&layout.feature)?;
    let weight_col = column(&layout.weight)?;
    let label_col = layout.label.as_deref().map(column).transpose()?;
    let score_col = layout.score.as_deref().map(column).transpose()?;

    struct Pending {
        prediction: Prediction,
        explainers: Vec<(String, Vec<FeatureAttribution>)>,
    }
    let mut instances: BTreeMap<String, Pending> = BTreeMap::new();
    let mut seen: HashMap<(String, String, String), u64> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let instance = field(instance_col);
        let explainer = field(explainer_col);
        let feature = field(feature_col);
        let weight: f64 = field(weight_col)
            .parse()
            .map_err(|e: std::num::ParseFloatError| IoError::BadValue {
                line,
                column: layout.weight.clone(),
                message: e.to_string(),
            })?;
        if !weight.is_finite() {
            return Err(IoError::BadValue {
                line,
                column: layout.weight.clone(),
                message: format!("non-finite weight {weight}"),
            });
        }
        let key = (instance.clone(), explainer.clone(), feature.clone());
        if seen.insert(key, line).is_some() {
            return Err(IoError::DuplicateRecord {
                line,
                instance_id: instance,
                explainer,
                feature,
            });
        }
        let score = match score_col {
            Some(i) if !field(i).is_empty() => {
                Some(field(i).parse::<f64>().map_err(|e| IoError::BadValue {
                    line,
                    column: layout.score.clone().unwrap_or_default(),
                    message: e.to_string(),
                })?)
            }
            _ => None,
        };
        let pending = instances.entry(instance).or_insert_with(|| Pending {
            prediction: Prediction::new(
                label_col.map_or_else(|| UNLABELED.to_string(), field),
                score,
            ),
            explainers: Vec::new(),
        });
        let attribution = FeatureAttribution::new(feature, weight);
        match pending.explainers.iter_mut().find(|(e, _)| *e == explainer) {
            Some((_, list)) => list.push(attribution),
            None => pending.explainers.push((explainer, vec![attribution])),
        }
    }

    Ok(instances
        .into_iter()
        .map(|(id, pending)| {
            let explanations = pending
                .explainers
                .into_iter()
                .map(|(name, mut list)| {
                    // stable sort keeps row order among equal magnitudes
                    list.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
                    Explanation::new(name, list)
                })
                .collect();
            ExplanationSet::new(id, pending.prediction, explanations)
        })
        .collect())
}
