//! Experiment runs over a corpus, persisted to a resumable run store.
//!
//! A run executes one task for every experimental document (hard-to-say
//! documents are skipped) on a bounded pool of worker threads. Each document
//! is handled by one worker, so the two IBI stages of a document always run in
//! order. Rows go through a single serialized writer.

mod store;
mod tasks;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Corpus, Credibility, Document, SplitSpec};
use crate::digest::sha256_hex;
use crate::gateway::{Gateway, GatewayError, ModelSpec, RequestOptions, Stage};
use crate::outparse::{DetectionVerdict, IntentAnalysis, ParseOutcome, ParseStatus};
use crate::promptkit::{MethodKind, PromptKit};
use crate::taxonomy::{render_knowledge_block, IntentCode, IntentTaxonomy};

pub use store::{RunRecord, RunStore, StoreHeader, STORE_FORMAT};
pub use tasks::{
    DetectBaselineTask, DetectIbiTask, IntentBinaryTask, IntentMultilabelTask, PriorRows, TaskContext, TaskRegistry,
    TaskStrategy,
};

/// Upper bound on worker threads per run.
pub const MAX_CONCURRENCY: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` already exists; resume it or pick another run id")]
    RunExists(String),
    #[error("run `{run_id}` was created with config hash {stored}, current config hashes to {current}")]
    ConfigMismatch {
        run_id: String,
        stored: String,
        current: String,
    },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("no strategy registered for task `{0}`")]
    UnknownTask(String),
    #[error("{}:{line}: {reason}", path.display())]
    CorruptStore { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    IntentBinary(IntentCode),
    IntentMultilabel,
    DetectBaseline(MethodKind),
    DetectIbi(MethodKind),
}

impl TaskKind {
    /// Strategy registry key.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::IntentBinary(_) => "intent-binary",
            TaskKind::IntentMultilabel => "intent-multilabel",
            TaskKind::DetectBaseline(_) => "detect-baseline",
            TaskKind::DetectIbi(_) => "detect-ibi",
        }
    }

    pub fn is_detection(self) -> bool {
        matches!(self, TaskKind::DetectBaseline(_) | TaskKind::DetectIbi(_))
    }

    pub fn method(self) -> Option<MethodKind> {
        match self {
            TaskKind::DetectBaseline(m) | TaskKind::DetectIbi(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::IntentBinary(code) => write!(f, "intent-binary:{code}"),
            TaskKind::IntentMultilabel => f.write_str("intent-multilabel"),
            TaskKind::DetectBaseline(m) => write!(f, "detect-baseline:{}", m.key()),
            TaskKind::DetectIbi(m) => write!(f, "detect-ibi:{}", m.key()),
        }
    }
}

impl FromStr for TaskKind {
    type Err = PipelineError;

    /// `intent-binary:<CODE>`, `intent-multilabel`, `detect-baseline:<method>`
    /// or `detect-ibi:<method>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::InvalidConfig(format!("unknown task `{s}`"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name.trim().to_ascii_lowercase().as_str(), arg) {
            ("intent-binary", Some(code)) => Ok(TaskKind::IntentBinary(code.parse().map_err(|_| bad())?)),
            ("intent-multilabel", None) => Ok(TaskKind::IntentMultilabel),
            ("detect-baseline", Some(m)) => Ok(TaskKind::DetectBaseline(m.parse().map_err(|_| bad())?)),
            ("detect-ibi", Some(m)) => Ok(TaskKind::DetectIbi(m.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for TaskKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub task: TaskKind,
    pub model: ModelSpec,
    #[serde(default)]
    pub options: RequestOptions,
    pub corpus_ref: PathBuf,
    /// Split used when evaluating this run; it does not restrict execution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_concurrency() -> usize {
    1
}

impl RunConfig {
    pub fn new(run_id: impl Into<String>, task: TaskKind, model: ModelSpec, corpus_ref: impl Into<PathBuf>) -> Self {
        Self {
            run_id: run_id.into(),
            task,
            model,
            options: RequestOptions::default(),
            corpus_ref: corpus_ref.into(),
            split: None,
            seed: 0,
            concurrency: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.concurrency == 0 || self.concurrency > MAX_CONCURRENCY {
            return Err(PipelineError::InvalidConfig(format!(
                "concurrency must be between 1 and {MAX_CONCURRENCY}, got {}",
                self.concurrency
            )));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Intents(IntentAnalysis),
    Detection(DetectionVerdict),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub doc_id: String,
    pub task: String,
    pub stage: Stage,
    #[serde(default)]
    pub prompt_digest: Option<String>,
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub parsed: Option<Parsed>,
    #[serde(default)]
    pub parse_status: Option<ParseOutcome>,
    pub gold_credibility: Credibility,
    #[serde(default)]
    pub gold_intents: BTreeSet<IntentCode>,
    /// Stage-two IBI rows: the analysis embedded in the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<IntentAnalysis>,
    /// Stage-two IBI rows built on an all-No fallback analysis.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRow {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn parse_failed(&self) -> bool {
        self.is_error() || self.parse_status.as_ref().is_none_or(|o| o.status == ParseStatus::Failed)
    }

    pub fn detection(&self) -> Option<&DetectionVerdict> {
        match &self.parsed {
            Some(Parsed::Detection(v)) => Some(v),
            _ => None,
        }
    }

    pub fn intents(&self) -> Option<&IntentAnalysis> {
        match &self.parsed {
            Some(Parsed::Intents(a)) => Some(a),
            _ => None,
        }
    }
}

/// Per-request timing, kept out of `rows.jsonl` so rows stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub doc_id: String,
    pub stage: Stage,
    pub latency_ms: f64,
    pub attempt_count: u32,
    pub from_cache: bool,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub row: PredictionRow,
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    /// Rows produced in this invocation.
    pub executed: usize,
    pub documents: usize,
    pub rows: usize,
    pub errors: usize,
    pub parse_failures: usize,
    pub degraded: usize,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    kit: &'a PromptKit,
    taxonomy: &'a IntentTaxonomy,
    tasks: TaskRegistry,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, kit: &'a PromptKit, taxonomy: &'a IntentTaxonomy) -> Self {
        Self {
            gateway,
            kit,
            taxonomy,
            tasks: TaskRegistry::builtin(),
        }
    }

    pub fn with_tasks(mut self, tasks: TaskRegistry) -> Self {
        self.tasks = tasks;
        self
    }

    /// Hash of everything that determines row contents. Run id and
    /// concurrency are excluded, as are timeouts and retry budgets.
    pub fn config_hash(&self, config: &RunConfig, corpus: &Corpus) -> String {
        let docs: Vec<&Document> = corpus.experimental().collect();
        let canonical = serde_json::json!({
            "task": config.task.to_string(),
            "model": config.model,
            "temperature": config.options.temperature,
            "max_tokens": config.options.max_tokens,
            "split": config.split.as_ref().map(|s| s.to_string()),
            "seed": config.seed,
            "prompts": self.kit.version(),
            "taxonomy": sha256_hex(serde_json::to_string(self.taxonomy).unwrap_or_default().as_bytes()),
            "corpus": sha256_hex(serde_json::to_string(&docs).unwrap_or_default().as_bytes()),
        });
        sha256_hex(canonical.to_string().as_bytes())
    }

    /// Starts a new run; fails with `RunExists` if the id is taken.
    pub fn start(&self, store: &RunStore, config: &RunConfig, corpus: &Corpus) -> Result<RunSummary, PipelineError> {
        config.validate()?;
        let record = RunRecord {
            config_hash: self.config_hash(config, corpus),
            prompt_version: self.kit.version().to_string(),
            config: config.clone(),
        };
        store.create(&record)?;
        self.execute(store, config, corpus)
    }

    /// Continues a stored run, executing only missing or failed
    /// `(doc, stage)` pairs. `concurrency` overrides the stored value.
    pub fn resume(
        &self,
        store: &RunStore,
        run_id: &str,
        corpus: &Corpus,
        concurrency: Option<usize>,
    ) -> Result<RunSummary, PipelineError> {
        let record = store.load_record(run_id)?;
        let mut config = record.config.clone();
        if let Some(c) = concurrency {
            config.concurrency = c;
        }
        self.check_hash(&record, &config, corpus)?;
        config.validate()?;
        self.execute(store, &config, corpus)
    }

    /// Starts the run, or resumes it when it exists with a matching config.
    pub fn run_or_resume(
        &self,
        store: &RunStore,
        config: &RunConfig,
        corpus: &Corpus,
    ) -> Result<RunSummary, PipelineError> {
        if !store.exists(&config.run_id) {
            return self.start(store, config, corpus);
        }
        let record = store.load_record(&config.run_id)?;
        self.check_hash(&record, config, corpus)?;
        config.validate()?;
        self.execute(store, config, corpus)
    }

    fn check_hash(&self, record: &RunRecord, config: &RunConfig, corpus: &Corpus) -> Result<(), PipelineError> {
        let current = self.config_hash(config, corpus);
        if current != record.config_hash {
            return Err(PipelineError::ConfigMismatch {
                run_id: record.config.run_id.clone(),
                stored: record.config_hash.clone(),
                current,
            });
        }
        Ok(())
    }

    fn execute(&self, store: &RunStore, config: &RunConfig, corpus: &Corpus) -> Result<RunSummary, PipelineError> {
        let strategy = self
            .tasks
            .get(config.task.name())
            .ok_or_else(|| PipelineError::UnknownTask(config.task.to_string()))?;
        self.gateway.validate(&config.model, &config.options)?;

        let (_, existing) = store.load_rows(&config.run_id)?;
        let completed: BTreeMap<(&str, Stage), &PredictionRow> = existing
            .iter()
            .filter(|r| !r.is_error())
            .map(|r| ((r.doc_id.as_str(), r.stage), r))
            .collect();
        let pending: Vec<(&Document, PriorRows<'_>)> = corpus
            .experimental()
            .filter_map(|doc| {
                let prior = PriorRows {
                    intent: completed.get(&(doc.id.as_str(), Stage::IntentAnalysis)).copied(),
                    detection: completed.get(&(doc.id.as_str(), Stage::Detection)).copied(),
                };
                let done = strategy.stages().iter().all(|s| prior.get(*s).is_some());
                (!done).then_some((doc, prior))
            })
            .collect();
        tracing::info!(run = %config.run_id, pending = pending.len(), "executing run");

        let knowledge = render_knowledge_block(self.taxonomy);
        let ctx = TaskContext {
            gateway: self.gateway,
            kit: self.kit,
            taxonomy: self.taxonomy,
            knowledge: &knowledge,
            model: &config.model,
            options: &config.options,
            task: &config.task,
        };
        let writer = Mutex::new(store.writer(&config.run_id)?);
        let write_error: Mutex<Option<PipelineError>> = Mutex::new(None);
        let next = AtomicUsize::new(0);
        let executed = AtomicUsize::new(0);
        let workers = config.concurrency.min(pending.len()).max(1);
        let strategy = Arc::clone(&strategy);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if write_error.lock().expect("error slot").is_some() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((doc, prior)) = pending.get(i) else { break };
                    let executions = strategy.run_document(&ctx, doc, prior);
                    let mut writer = writer.lock().expect("store writer");
                    for exec in &executions {
                        if let Err(e) = writer.append(&exec.row, exec.timing.as_ref()) {
                            write_error.lock().expect("error slot").get_or_insert(e);
                            return;
                        }
                        executed.fetch_add(1, Ordering::SeqCst);
                    }
                });
            }
        });
        if let Some(e) = write_error.into_inner().expect("error slot") {
            return Err(e);
        }
        drop(writer);

        store.compact(&config.run_id)?;
        let (_, rows) = store.load_rows(&config.run_id)?;
        Ok(RunSummary {
            run_id: config.run_id.clone(),
            executed: executed.into_inner(),
            documents: corpus.experimental().count(),
            rows: rows.len(),
            errors: rows.iter().filter(|r| r.is_error()).count(),
            parse_failures: rows.iter().filter(|r| !r.is_error() && r.parse_failed()).count(),
            degraded: rows.iter().filter(|r| r.degraded).count(),
        })
    }
}
