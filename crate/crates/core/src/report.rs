//! Result tables rendered as markdown and CSV from the same cells.
//!
//! Every table ends with a provenance footer naming the runs (id, config
//! hash, parse failures) its numbers come from.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Credibility};
use crate::metrics::{delta, MetricReport};
use crate::stats::McNemarResult;
use crate::taxonomy::IntentCode;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to compare: {0}")]
    EmptyRuns(String),
    #[error("report name `{0}` may only contain letters, digits, `-`, `_` and `.`")]
    InvalidName(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        let line = |cells: &[String]| format!("| {} |\n", cells.iter().map(|c| c.replace('|', "\\|")).collect::<Vec<_>>().join(" | "));
        out.push_str(&line(&self.headers));
        out.push_str(&format!("|{}\n", "---|".repeat(self.headers.len())));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        if !self.footer.is_empty() {
            out.push_str("\nProvenance:\n");
            for note in &self.footer {
                out.push_str(&format!("- {note}\n"));
            }
        }
        out
    }

    /// Header and rows as CSV, then the footer as `#` comment lines.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(&self.headers)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let mut out = String::from_utf8(writer.into_inner().map_err(|e| e.into_error())?).expect("utf-8 cells");
        for note in &self.footer {
            out.push_str(&format!("# {note}\n"));
        }
        Ok(out)
    }

    /// Writes `<dir>/<name>.md` and `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf), ReportError> {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(ReportError::InvalidName(name.to_string()));
        }
        fs::create_dir_all(dir)?;
        let md = dir.join(format!("{name}.md"));
        let csv = dir.join(format!("{name}.csv"));
        fs::write(&md, self.to_markdown())?;
        fs::write(&csv, self.to_csv()?)?;
        Ok((md, csv))
    }
}

/// Where a reported number came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRef {
    pub run_id: String,
    pub config_hash: String,
    pub parse_failures: usize,
}

impl RunRef {
    fn describe(&self) -> String {
        let short = &self.config_hash[..self.config_hash.len().min(12)];
        format!("`{}` (config {short}, {} parse failures)", self.run_id, self.parse_failures)
    }
}

/// One Base/IBI pair evaluated on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub method: String,
    pub model: String,
    pub split: String,
    pub base_f1: f64,
    pub ibi_f1: f64,
    pub test: Option<McNemarResult>,
    pub base: RunRef,
    pub ibi: RunRef,
}

pub fn format_f1(v: f64) -> String {
    format!("{v:.3}")
}

pub fn format_delta_abs(v: f64) -> String {
    // Avoid printing "-0.000".
    let v = if v.abs() < 5e-4 { 0.0 } else { v };
    format!("{v:+.3}")
}

pub fn format_delta_rel(v: Option<f64>) -> String {
    match v {
        Some(v) => {
            let v = if v.abs() < 0.05 { 0.0 } else { v };
            format!("{v:+.1}%")
        }
        None => "n/a".into(),
    }
}

/// Rows are method x model, and every split contributes Base, IBI, both
/// deltas and the significance bucket. Order follows first appearance.
pub fn comparison_table(title: &str, entries: &[ComparisonEntry]) -> Result<Table, ReportError> {
    if entries.is_empty() {
        return Err(ReportError::EmptyRuns("no Base/IBI pairs".into()));
    }
    let mut splits: Vec<&str> = Vec::new();
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for e in entries {
        if !splits.contains(&e.split.as_str()) {
            splits.push(&e.split);
        }
        if !keys.contains(&(e.method.as_str(), e.model.as_str())) {
            keys.push((&e.method, &e.model));
        }
    }
    let mut headers = vec!["Method".to_string(), "Model".to_string()];
    for split in &splits {
        for col in ["Base", "IBI", "Δabs", "Δrel", "sig"] {
            headers.push(format!("{split} {col}"));
        }
    }
    let mut rows = Vec::new();
    let mut footer = Vec::new();
    for (method, model) in &keys {
        let mut row = vec![method.to_string(), model.to_string()];
        for split in &splits {
            match entries.iter().find(|e| e.method == *method && e.model == *model && e.split == *split) {
                Some(e) => {
                    let d = delta(e.base_f1, e.ibi_f1);
                    row.extend([
                        format_f1(e.base_f1),
                        format_f1(e.ibi_f1),
                        format_delta_abs(d.absolute),
                        format_delta_rel(d.relative_pct),
                        e.test.map(|t| t.significance.to_string()).unwrap_or_default(),
                    ]);
                    footer.push(format!(
                        "{method} / {model} / {split}: base {}, ibi {}{}",
                        e.base.describe(),
                        e.ibi.describe(),
                        e.test
                            .map(|t| format!(", McNemar b={} c={} p={:.4}", t.b, t.c, t.p_value))
                            .unwrap_or_default()
                    ));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        rows.push(row);
    }
    Ok(Table {
        title: title.to_string(),
        headers,
        rows,
        footer,
    })
}

/// Percent of positives and negatives, each rounded to the nearest integer.
pub fn class_split_cell(corpus: &Corpus) -> String {
    let (mut dis, mut cred) = (0usize, 0usize);
    for doc in corpus.experimental() {
        match doc.credibility {
            Credibility::Disinformation => dis += 1,
            Credibility::Credible => cred += 1,
            Credibility::HardToSay => {}
        }
    }
    let total = dis + cred;
    let pct = |n: usize| if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
    format!("{:.0}% / {:.0}%", pct(dis).round(), pct(cred).round())
}

/// One row per corpus with its disinformation / credible split.
pub fn distribution_table(title: &str, corpora: &[(&str, &Corpus)]) -> Table {
    Table {
        title: title.to_string(),
        headers: vec!["Dataset".into(), "Documents".into(), "Disinformation / Credible".into()],
        rows: corpora
            .iter()
            .map(|(name, c)| vec![name.to_string(), c.experimental().count().to_string(), class_split_cell(c)])
            .collect(),
        footer: Vec::new(),
    }
}

/// One intent-classification result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEntry {
    pub model: String,
    pub setting: String,
    pub report: MetricReport,
    pub runs: Vec<RunRef>,
}

/// Per-intent F1 with micro and weighted F1; labels a run did not score are
/// left blank.
pub fn intent_table(title: &str, entries: &[IntentEntry]) -> Table {
    let mut headers = vec!["Model".to_string(), "Setting".to_string()];
    headers.extend(IntentCode::ALL.iter().map(|c| c.to_string()));
    headers.extend(["Micro F1".to_string(), "Weighted F1".to_string()]);
    let mut footer = Vec::new();
    let rows = entries
        .iter()
        .map(|e| {
            let mut row = vec![e.model.clone(), e.setting.clone()];
            row.extend(IntentCode::ALL.iter().map(|c| e.report.f1(c.as_str()).map(format_f1).unwrap_or_default()));
            row.push(format_f1(e.report.micro_f1));
            row.push(format_f1(e.report.weighted_f1));
            for run in &e.runs {
                footer.push(format!("{} / {}: {}", e.model, e.setting, run.describe()));
            }
            row
        })
        .collect();
    Table {
        title: title.to_string(),
        headers,
        rows,
        footer,
    }
}

/// Single-run detection summary.
pub fn detection_table(title: &str, entries: &[(String, String, MetricReport, RunRef)]) -> Table {
    let mut footer = Vec::new();
    let rows = entries
        .iter()
        .map(|(setting, split, report, run)| {
            footer.push(format!("{setting} / {split}: {}", run.describe()));
            let score = report.per_label.values().next().copied();
            vec![
                setting.clone(),
                split.clone(),
                score.map(|s| format_f1(s.precision)).unwrap_or_default(),
                score.map(|s| format_f1(s.recall)).unwrap_or_default(),
                format_f1(report.micro_f1),
                report.documents.to_string(),
            ]
        })
        .collect();
    Table {
        title: title.to_string(),
        headers: ["Setting", "Split", "Precision", "Recall", "F1", "Documents"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows,
        footer,
    }
}

/// Groups per-label scores by row key; used to merge binary runs.
pub fn merge_label_scores(reports: &[(String, &MetricReport)]) -> BTreeMap<String, f64> {
    reports
        .iter()
        .flat_map(|(_, r)| r.per_label.iter().map(|(l, s)| (l.clone(), s.f1)))
        .collect()
}
