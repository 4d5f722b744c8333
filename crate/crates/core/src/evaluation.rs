//! Sentence-similarity evaluation: Spearman correlation between cosine
//! similarities and gold scores, on a whole dataset and on an annotated subset.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, Encoder};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("correlation needs equal, non-empty inputs (got {0} and {1})")]
    Length(usize, usize),
    #[error("correlation is undefined for constant input")]
    Undefined,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("subset id {0} is not a pair of the dataset")]
    UnknownPair(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub id: usize,
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetAnnotation {
    pub dataset: String,
    pub members: BTreeSet<usize>,
}

/// Reads `gold<TAB>sentence_a<TAB>sentence_b` rows. Blank lines are skipped;
/// ids follow row order.
pub fn load_sts<R: BufRead>(source: R) -> Result<Vec<StsPair>> {
    let mut pairs = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EvalError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [gold, a, b] = fields.as_slice() else {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let gold_score: f64 = gold
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad gold score {gold:?}")))?;
        if !gold_score.is_finite() {
            return Err(parse_err("gold score is not finite".into()));
        }
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(parse_err("empty sentence".into()));
        }
        pairs.push(StsPair {
            id: pairs.len(),
            sentence_a: a.to_string(),
            sentence_b: b.to_string(),
            gold_score,
        });
    }
    Ok(pairs)
}

/// Reads a sidecar of pair ids, one per line, checked against `dataset`.
pub fn load_subset<R: BufRead>(
    source: R,
    name: &str,
    dataset: &[StsPair],
) -> Result<SubsetAnnotation> {
    let mut members = BTreeSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: usize = line.parse().map_err(|_| EvalError::Parse {
            line: i + 1,
            message: format!("bad pair id {line:?}"),
        })?;
        if id >= dataset.len() {
            return Err(EvalError::UnknownPair(id));
        }
        members.insert(id);
    }
    Ok(SubsetAnnotation {
        dataset: name.to_string(),
        members,
    })
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Undefined);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation (Pearson over average ranks).
pub fn spearman(predictions: &[f64], gold: &[f64]) -> Result<f64> {
    if predictions.len() != gold.len() || predictions.is_empty() {
        return Err(EvalError::Length(predictions.len(), gold.len()));
    }
    if predictions.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(EvalError::Undefined);
    }
    pearson(&average_ranks(predictions), &average_ranks(gold))
}

/// Correlation ×100, rounded to two decimals.
pub fn table_score(rho: f64) -> f64 {
    (rho * 10_000.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub all: f64,
    pub subset: Option<f64>,
    pub n_all: usize,
    pub n_subset: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Cosine similarity of each pair's sentence embeddings.
pub fn predict(encoder: &dyn Encoder, dataset: &[StsPair]) -> Result<Vec<f64>> {
    let mut texts: Vec<&str> = dataset
        .iter()
        .flat_map(|p| [p.sentence_a.as_str(), p.sentence_b.as_str()])
        .collect();
    texts.sort_unstable();
    texts.dedup();
    let vectors = encoder.encode_batch(&texts)?;
    let lookup: HashMap<&str, _> = texts.into_iter().zip(vectors).collect();
    dataset
        .iter()
        .map(|p| {
            Ok(cosine_similarity(
                &lookup[p.sentence_a.as_str()],
                &lookup[p.sentence_b.as_str()],
            )?)
        })
        .collect()
}

/// Scores precomputed predictions; the subset reuses the same vector.
pub fn evaluate_predictions(
    name: &str,
    dataset: &[StsPair],
    predictions: &[f64],
    subset: Option<&SubsetAnnotation>,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let gold: Vec<f64> = dataset.iter().map(|p| p.gold_score).collect();
    let all = table_score(spearman(predictions, &gold)?);
    let mut warnings = Vec::new();
    let (subset_score, n_subset) = match subset {
        None => (None, 0),
        Some(annotation) => {
            let ids: Vec<usize> = annotation.members.iter().copied().collect();
            if let Some(&bad) = ids.iter().find(|&&i| i >= dataset.len()) {
                return Err(EvalError::UnknownPair(bad));
            }
            if ids.len() < 2 {
                warnings.push(format!(
                    "subset of {name} has {} pair(s); subset score omitted",
                    ids.len()
                ));
                (None, ids.len())
            } else {
                let p: Vec<f64> = ids.iter().map(|&i| predictions[i]).collect();
                let g: Vec<f64> = ids.iter().map(|&i| gold[i]).collect();
                match spearman(&p, &g) {
                    Ok(rho) => (Some(table_score(rho)), ids.len()),
                    Err(e) => {
                        warnings.push(format!("subset of {name}: {e}"));
                        (None, ids.len())
                    }
                }
            }
        }
    };
    Ok(EvaluationReport {
        dataset: name.to_string(),
        all,
        subset: subset_score,
        n_all: dataset.len(),
        n_subset,
        warnings,
    })
}

pub fn evaluate(
    encoder: &dyn Encoder,
    name: &str,
    dataset: &[StsPair],
    subset: Option<&SubsetAnnotation>,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let predictions = predict(encoder, dataset)?;
    evaluate_predictions(name, dataset, &predictions, subset)
}

/// One model variant's scores across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    /// `orig` or `kinf`.
    pub variant: String,
    pub reports: Vec<EvaluationReport>,
}

/// Renders rows as a plain-text table with All/Dis columns per dataset.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for row in rows {
        for r in &row.reports {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
    }
    let label_width = rows
        .iter()
        .map(|r| r.model.len() + r.variant.len() + 1)
        .chain(std::iter::once("Embedding".len()))
        .max()
        .unwrap_or(9);
    let cell = 7;
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Embedding");
    for d in &datasets {
        let _ = write!(out, " | {:^w$}", d, w = cell * 2 + 3);
    }
    out.push('\n');
    let _ = write!(out, "{:<label_width$}", "");
    for _ in &datasets {
        let _ = write!(out, " | {:>cell$} | {:>cell$}", "All", "Dis");
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    for row in rows {
        let _ = write!(
            out,
            "{:<label_width$}",
            format!("{}_{}", row.model, row.variant)
        );
        for d in &datasets {
            let report = row.reports.iter().find(|r| r.dataset == *d);
            let _ = write!(
                out,
                " | {:>cell$} | {:>cell$}",
                fmt(report.map(|r| r.all)),
                fmt(report.and_then(|r| r.subset))
            );
        }
        out.push('\n');
    }
    out
}
