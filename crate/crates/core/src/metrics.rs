//! F1 over the positive class, micro and weighted multilabel F1,
//! intent-conditioned F1 and base-to-IBI deltas.
//!
//! Every task is scored as a set of positive labels per document: a
//! detection document is `{Disinformation}` or empty, an intent document
//! holds its intent codes. Rows whose reply could not be parsed count as
//! negative predictions and are tallied in `parse_failure_count`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Credibility;
use crate::gateway::Stage;
use crate::outparse::DetectionLabel;
use crate::pipeline::{PredictionRow, TaskKind};
use crate::taxonomy::IntentCode;

pub const DISINFORMATION: &str = "Disinformation";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold and predictions are not aligned; unmatched ids: {}", .0.join(", "))]
    Misaligned(Vec<String>),
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("{}:{line}: {reason}", path.display())]
    Interchange {
        path: std::path::PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (gold, pred) in pairs {
            c.add(gold, pred);
        }
        c
    }

    pub fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_positive(self)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
        self.tn += rhs.tn;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2tp / (2tp + fp + fn)`, and 0 when nothing is positive in gold or
/// prediction.
pub fn f1_positive(counts: &ConfusionCounts) -> f64 {
    ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub counts: ConfusionCounts,
}

impl From<ConfusionCounts> for LabelScore {
    fn from(counts: ConfusionCounts) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            support: counts.support(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_label: BTreeMap<String, LabelScore>,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub documents: usize,
    pub parse_failure_count: usize,
    /// No positives in gold or prediction for any label; all F1s are 0 by
    /// convention.
    pub degenerate: bool,
}

impl MetricReport {
    pub fn f1(&self, label: &str) -> Option<f64> {
        self.per_label.get(label).map(|s| s.f1)
    }
}

type GoldPred<'a, L> = (&'a BTreeSet<L>, &'a BTreeSet<L>);

fn align<'a, L>(
    gold: &'a [(String, BTreeSet<L>)],
    pred: &'a [(String, BTreeSet<L>)],
) -> Result<Vec<GoldPred<'a, L>>, MetricsError> {
    let index = |rows: &'a [(String, BTreeSet<L>)]| -> Result<BTreeMap<&'a str, &'a BTreeSet<L>>, MetricsError> {
        let mut map = BTreeMap::new();
        for (id, set) in rows {
            if map.insert(id.as_str(), set).is_some() {
                return Err(MetricsError::DuplicateId(id.clone()));
            }
        }
        Ok(map)
    };
    let g = index(gold)?;
    let p = index(pred)?;
    let unmatched: Vec<String> = g
        .keys()
        .filter(|k| !p.contains_key(*k))
        .chain(p.keys().filter(|k| !g.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(MetricsError::Misaligned(unmatched));
    }
    Ok(g.into_iter().map(|(id, gs)| (gs, p[id])).collect())
}

/// Per-label, micro and support-weighted F1 over documents aligned by id.
pub fn multilabel_scores<L: Ord + ToString>(
    gold: &[(String, BTreeSet<L>)],
    pred: &[(String, BTreeSet<L>)],
    labels: &[L],
) -> Result<MetricReport, MetricsError> {
    let pairs = align(gold, pred)?;
    let mut per_label = BTreeMap::new();
    let mut pooled = ConfusionCounts::default();
    let mut weighted_sum = 0.0;
    let mut support_sum = 0u64;
    for label in labels {
        let counts = ConfusionCounts::from_pairs(pairs.iter().map(|(g, p)| (g.contains(label), p.contains(label))));
        pooled += counts;
        weighted_sum += counts.support() as f64 * counts.f1();
        support_sum += counts.support();
        per_label.insert(label.to_string(), LabelScore::from(counts));
    }
    Ok(MetricReport {
        per_label,
        micro_f1: pooled.f1(),
        weighted_f1: if support_sum == 0 { 0.0 } else { weighted_sum / support_sum as f64 },
        documents: pairs.len(),
        parse_failure_count: 0,
        degenerate: pooled.tp + pooled.fp + pooled.fn_ == 0,
    })
}

/// F1 on the documents whose prediction for `code` was right versus wrong.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedF1 {
    pub code: IntentCode,
    /// `None` when the partition is empty.
    pub f1_correct: Option<f64>,
    pub f1_incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

/// One binary detection decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryOutcome {
    pub doc_id: String,
    pub gold: bool,
    pub pred: bool,
}

pub fn intent_conditioned_f1(
    detections: &[BinaryOutcome],
    intent_pred: &BTreeMap<String, BTreeSet<IntentCode>>,
    gold_intents: &BTreeMap<String, BTreeSet<IntentCode>>,
    code: IntentCode,
) -> Result<ConditionedF1, MetricsError> {
    let missing: Vec<String> = detections
        .iter()
        .filter(|d| !intent_pred.contains_key(&d.doc_id) || !gold_intents.contains_key(&d.doc_id))
        .map(|d| d.doc_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::Misaligned(missing));
    }
    let mut correct = ConfusionCounts::default();
    let mut incorrect = ConfusionCounts::default();
    for d in detections {
        let right = intent_pred[&d.doc_id].contains(&code) == gold_intents[&d.doc_id].contains(&code);
        if right { &mut correct } else { &mut incorrect }.add(d.gold, d.pred);
    }
    let score = |c: &ConfusionCounts| (c.total() > 0).then(|| c.f1());
    Ok(ConditionedF1 {
        code,
        f1_correct: score(&correct),
        f1_incorrect: score(&incorrect),
        n_correct: correct.total() as usize,
        n_incorrect: incorrect.total() as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub absolute: f64,
    /// Percent change relative to the base; `None` when the base is 0.
    pub relative_pct: Option<f64>,
}

pub fn delta(base_f1: f64, ibi_f1: f64) -> Delta {
    let absolute = ibi_f1 - base_f1;
    Delta {
        absolute,
        relative_pct: (base_f1 != 0.0).then(|| 100.0 * absolute / base_f1),
    }
}

/// One line of the prediction interchange format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterchangeRow {
    pub doc_id: String,
    pub task: String,
    pub gold: BTreeSet<String>,
    pub pred: BTreeSet<String>,
    #[serde(default)]
    pub parse_failed: bool,
}

/// Labels scored for a task.
pub fn task_labels(task: TaskKind) -> Vec<String> {
    match task {
        TaskKind::DetectBaseline(_) | TaskKind::DetectIbi(_) => vec![DISINFORMATION.to_string()],
        TaskKind::IntentBinary(code) => vec![code.to_string()],
        TaskKind::IntentMultilabel => IntentCode::ALL.iter().map(|c| c.to_string()).collect(),
    }
}

/// Converts stored rows of the given stage into interchange rows. For IBI
/// runs, `Stage::IntentAnalysis` yields the stage-one intent predictions.
pub fn interchange_from_rows(rows: &[PredictionRow], task: TaskKind, intents: bool) -> Vec<InterchangeRow> {
    let detection = task.is_detection() && !intents;
    let stage = if detection { Stage::Detection } else { Stage::IntentAnalysis };
    rows.iter()
        .filter(|r| r.stage == stage)
        .map(|r| {
            let (gold, pred): (BTreeSet<String>, BTreeSet<String>) = if detection {
                let gold = (r.gold_credibility == Credibility::Disinformation).then(|| DISINFORMATION.to_string());
                let pred = r
                    .detection()
                    .filter(|v| v.label == DetectionLabel::Disinformation)
                    .map(|_| DISINFORMATION.to_string());
                (gold.into_iter().collect(), pred.into_iter().collect())
            } else {
                let scope: Vec<IntentCode> = match task {
                    TaskKind::IntentBinary(code) => vec![code],
                    _ => IntentCode::ALL.to_vec(),
                };
                let gold = r
                    .gold_intents
                    .iter()
                    .filter(|c| scope.contains(c))
                    .map(|c| c.to_string())
                    .collect();
                let pred = r
                    .intents()
                    .map(|a| a.positives().into_iter().filter(|c| scope.contains(c)).map(|c| c.to_string()).collect())
                    .unwrap_or_default();
                (gold, pred)
            };
            InterchangeRow {
                doc_id: r.doc_id.clone(),
                task: if intents && task.is_detection() {
                    TaskKind::IntentMultilabel.to_string()
                } else {
                    r.task.clone()
                },
                gold,
                pred,
                parse_failed: r.parse_failed(),
            }
        })
        .collect()
}

/// Scores interchange rows; failed rows keep whatever prediction they carry
/// (empty for the built-in defaults) and are counted.
pub fn evaluate(rows: &[InterchangeRow], labels: &[String]) -> Result<MetricReport, MetricsError> {
    let gold: Vec<(String, BTreeSet<String>)> = rows.iter().map(|r| (r.doc_id.clone(), r.gold.clone())).collect();
    let pred: Vec<(String, BTreeSet<String>)> = rows.iter().map(|r| (r.doc_id.clone(), r.pred.clone())).collect();
    let mut report = multilabel_scores(&gold, &pred, labels)?;
    report.parse_failure_count = rows.iter().filter(|r| r.parse_failed).count();
    Ok(report)
}

/// Binary outcomes for the single positive label.
pub fn binary_outcomes(rows: &[InterchangeRow], label: &str) -> Vec<BinaryOutcome> {
    rows.iter()
        .map(|r| BinaryOutcome {
            doc_id: r.doc_id.clone(),
            gold: r.gold.contains(label),
            pred: r.pred.contains(label),
        })
        .collect()
}

pub fn write_interchange(path: &Path, rows: &[InterchangeRow]) -> Result<(), MetricsError> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_interchange(path: &Path) -> Result<Vec<InterchangeRow>, MetricsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| MetricsError::Interchange {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}
