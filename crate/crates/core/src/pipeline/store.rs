//! On-disk run records: `<root>/<run_id>/config.json`, `rows.jsonl` and a
//! `timing.jsonl` sidecar.
//!
//! `rows.jsonl` starts with a header line naming the run and its config hash.
//! Rows are appended as they complete; a later row for the same
//! `(doc_id, stage)` supersedes an earlier one. A finished run is compacted to
//! one row per key in `(doc_id, stage)` order.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, PredictionRow, RunConfig, Timing};
use crate::gateway::Stage;

pub const STORE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub run_id: String,
    pub config_hash: String,
    pub format: u32,
}

/// Contents of `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub prompt_version: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn rows_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("rows.jsonl")
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).join("config.json").is_file()
    }

    pub fn list(&self) -> Result<Vec<String>, PipelineError> {
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if let Some(id) = entry.file_name().to_str() {
                if self.exists(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub(crate) fn create(&self, record: &RunRecord) -> Result<(), PipelineError> {
        let run_id = &record.config.run_id;
        validate_run_id(run_id)?;
        if self.exists(run_id) {
            return Err(PipelineError::RunExists(run_id.clone()));
        }
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("config.json"), &to_pretty(record)?)?;
        let header = StoreHeader {
            run_id: run_id.clone(),
            config_hash: record.config_hash.clone(),
            format: STORE_FORMAT,
        };
        write_atomic(&self.rows_path(run_id), &format!("{}\n", to_line(&header)?))?;
        File::create(dir.join("timing.jsonl"))?;
        Ok(())
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord, PipelineError> {
        if !self.exists(run_id) {
            return Err(PipelineError::UnknownRun(run_id.to_string()));
        }
        let path = self.run_dir(run_id).join("config.json");
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::CorruptStore {
            path,
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Header plus the effective rows: the last row for each `(doc_id, stage)`
    /// in key order. A torn final line left by a crash is skipped.
    pub fn load_rows(&self, run_id: &str) -> Result<(StoreHeader, Vec<PredictionRow>), PipelineError> {
        if !self.exists(run_id) {
            return Err(PipelineError::UnknownRun(run_id.to_string()));
        }
        load_rows_file(&self.rows_path(run_id))
    }

    pub(crate) fn writer(&self, run_id: &str) -> Result<StoreWriter, PipelineError> {
        let dir = self.run_dir(run_id);
        let open = |name: &str| OpenOptions::new().append(true).create(true).open(dir.join(name));
        let rows = open("rows.jsonl")?;
        repair_torn_tail(&self.rows_path(run_id), &rows)?;
        Ok(StoreWriter {
            rows: BufWriter::new(rows),
            timing: BufWriter::new(open("timing.jsonl")?),
        })
    }

    /// Rewrites `rows.jsonl` with one row per key, sorted.
    pub(crate) fn compact(&self, run_id: &str) -> Result<(), PipelineError> {
        let (header, rows) = self.load_rows(run_id)?;
        let mut out = format!("{}\n", to_line(&header)?);
        for row in &rows {
            out.push_str(&to_line(row)?);
            out.push('\n');
        }
        write_atomic(&self.rows_path(run_id), &out)
    }
}

pub(crate) struct StoreWriter {
    rows: BufWriter<File>,
    timing: BufWriter<File>,
}

impl StoreWriter {
    /// Appends and flushes, so a crash loses at most the line being written.
    pub(crate) fn append(&mut self, row: &PredictionRow, timing: Option<&Timing>) -> Result<(), PipelineError> {
        writeln!(self.rows, "{}", to_line(row)?)?;
        self.rows.flush()?;
        if let Some(timing) = timing {
            writeln!(self.timing, "{}", to_line(timing)?)?;
            self.timing.flush()?;
        }
        Ok(())
    }
}

fn validate_run_id(run_id: &str) -> Result<(), PipelineError> {
    let ok = !run_id.is_empty()
        && run_id != "."
        && run_id != ".."
        && run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(PipelineError::InvalidConfig(format!(
            "run id `{run_id}` may only contain letters, digits, `-`, `_` and `.`"
        )))
    }
}

fn to_line<T: Serialize>(value: &T) -> Result<String, PipelineError> {
    serde_json::to_string(value).map_err(|e| PipelineError::Io(std::io::Error::other(e)))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String, PipelineError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| PipelineError::Io(std::io::Error::other(e)))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Drops an unterminated last line so appends start on a fresh line.
fn repair_torn_tail(path: &Path, file: &File) -> Result<(), PipelineError> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    file.set_len(keep as u64)?;
    Ok(())
}

pub(crate) fn load_rows_file(path: &Path) -> Result<(StoreHeader, Vec<PredictionRow>), PipelineError> {
    let corrupt = |line: usize, reason: String| PipelineError::CorruptStore {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let header_line = lines.first().ok_or_else(|| corrupt(1, "missing header".into()))?;
    let header: StoreHeader = serde_json::from_str(header_line).map_err(|e| corrupt(1, e.to_string()))?;
    let mut latest: BTreeMap<(String, Stage), PredictionRow> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionRow>(line) {
            Ok(row) => {
                latest.insert((row.doc_id.clone(), row.stage), row);
            }
            Err(_) if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), line = i + 1, "skipping torn final row");
            }
            Err(e) => return Err(corrupt(i + 1, e.to_string())),
        }
    }
    Ok((header, latest.into_values().collect()))
}
