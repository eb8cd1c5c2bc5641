use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ibi_core::promptkit::MethodKind;
use ibi_core::taxonomy::IntentCode;

#[derive(Debug, Parser)]
#[command(name = "ibi", version, about = "Intent-based inoculation experiments: corpora, runs, evaluation and reports")]
pub struct Cli {
    /// Root for corpora, runs, cache, predictions and reports.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// TOML config; defaults to `<workdir>/ibi.toml` when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and store it under the workdir.
    Ingest(IngestArgs),
    /// Draw a stratified sample from a stored corpus.
    Sample(SampleArgs),
    /// Partition a stored corpus by genre, publication date or language.
    Split(SplitArgs),
    /// Execute (or resume) an LLM run.
    Run(RunArgs),
    /// Fit a classic baseline and write interchange predictions.
    Baseline(BaselineArgs),
    /// Score a run or a prediction file.
    Eval(EvalArgs),
    /// Significance test between a Base and an IBI result.
    Compare(CompareArgs),
    /// Render a table to reports/<name>.md and reports/<name>.csv.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub path: PathBuf,
    /// Defaults to the file extension.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Stored as `corpus/<name>.jsonl`.
    #[arg(long, default_value = "corpus")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Class fractions, e.g. `disinformation=0.3,credible=0.7`.
    #[arg(long, default_value = "disinformation=0.3,credible=0.7")]
    pub target: String,
    #[arg(long, default_value = "sample")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Genre,
    Temporal,
    Language,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: String,
    #[arg(long, value_enum)]
    pub kind: SplitKind,
    /// `YYYY-MM`; the cutoff month itself counts as prior.
    #[arg(long)]
    pub cutoff: Option<String>,
    /// Take the cutoff from this model's knowledge cutoff.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Detect,
    IntentBinary,
    IntentMultilabel,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// van, zcot or defspec (detection only).
    #[arg(long)]
    pub method: Option<MethodKind>,
    /// Two-stage inoculated detection.
    #[arg(long)]
    pub ibi: bool,
    /// Intent code for `intent-binary`.
    #[arg(long)]
    pub intent: Option<IntentCode>,
    /// Config/catalog alias, provider model id, or `mock:<behavior>:<seed>`.
    #[arg(long)]
    pub model: String,
    /// Reply script for `mock:scripted`; defaults to `<workdir>/mock-script.jsonl`.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, default_value = "corpus")]
    pub corpus: String,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Continue an existing run with the same configuration.
    #[arg(long)]
    pub resume: bool,
    /// Split used by eval and report: `genre`, `temporal`, `temporal:YYYY-MM`, `language:<tag>`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub auth_env: Option<String>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Do not read or write the response cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Ignore cached replies but store fresh ones.
    #[arg(long)]
    pub refresh: bool,
    /// Taxonomy override JSON.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Registered baseline: `logreg` or `random`.
    #[arg(long, default_value = "logreg")]
    pub name: String,
    #[arg(long, value_enum, default_value = "detect")]
    pub target: TaskArg,
    #[arg(long)]
    pub intent: Option<IntentCode>,
    #[arg(long)]
    pub train: String,
    #[arg(long)]
    pub test: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Written to `predictions/<out>.jsonl`.
    #[arg(long)]
    pub out: String,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub min_df: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub run: Option<String>,
    /// Interchange JSONL file instead of a run.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// `intent-multilabel` on an IBI run scores its stage-one analyses.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub split: Option<String>,
    /// Corpus used to resolve `--split` for prediction files.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Also write the scored rows as interchange JSONL.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    Mcnemar,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, required_unless_present = "base_predictions", conflicts_with = "base_predictions")]
    pub base_run: Option<String>,
    #[arg(long)]
    pub base_predictions: Option<PathBuf>,
    #[arg(long, required_unless_present = "ibi_predictions", conflicts_with = "ibi_predictions")]
    pub ibi_run: Option<String>,
    #[arg(long)]
    pub ibi_predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mcnemar")]
    pub test: TestArg,
    #[arg(long)]
    pub split: Option<String>,
    /// Corpus used to resolve `--split` for prediction files.
    #[arg(long)]
    pub corpus: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// Base vs IBI per method and model.
    Comparison,
    /// Class distribution per corpus.
    Distribution,
    /// Per-intent F1.
    Intent,
    /// Precision, recall and F1 per run.
    Detection,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    #[arg(long, value_delimiter = ',')]
    pub runs: Vec<String>,
    /// `name` or `label=name` (distribution reports).
    #[arg(long, value_delimiter = ',')]
    pub corpus: Vec<String>,
    /// Adds columns for both sides of each split.
    #[arg(long)]
    pub split: Vec<String>,
    /// Defaults to the report kind.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
}
