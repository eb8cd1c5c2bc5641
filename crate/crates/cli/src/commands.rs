use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ibi_core::classic::{BaselineRegistry, ClassicTarget, LogRegHyper, LogisticRegression};
use ibi_core::corpus::{self, compute_stats, load_corpus, stratified_sample, Corpus, CorpusFormat, Credibility, Document, SplitSpec};
use ibi_core::gateway::{Gateway, ModelSpec, Provider};
use ibi_core::metrics::{
    binary_outcomes, delta, evaluate, intent_conditioned_f1, interchange_from_rows, read_interchange, task_labels,
    write_interchange, InterchangeRow, MetricReport, DISINFORMATION,
};
use ibi_core::pipeline::{Pipeline, PredictionRow, RunConfig, RunRecord, RunStore, TaskKind};
use ibi_core::promptkit::{MethodKind, PromptKit};
use ibi_core::report::{self, ComparisonEntry, IntentEntry, ReportError, RunRef};
use ibi_core::stats::{mcnemar, pair, McNemarResult, PairedOutcomes};
use ibi_core::taxonomy::{builtin_taxonomy, IntentCode, IntentTaxonomy};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::FileConfig;
use crate::CliError;

struct Ctx {
    workdir: PathBuf,
    config: FileConfig,
}

pub(crate) fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Ctx {
        workdir: cli.workdir.clone(),
        config: FileConfig::load(cli.config.as_deref(), &cli.workdir)?,
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Sample(a) => sample(&ctx, a, out),
        Command::Split(a) => split(&ctx, a, out),
        Command::Run(a) => run(&ctx, a, out),
        Command::Baseline(a) => baseline(&ctx, a, out),
        Command::Eval(a) => eval(&ctx, a, out),
        Command::Compare(a) => compare(&ctx, a, out),
        Command::Report(a) => report_cmd(&ctx, a, out),
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn check_name(what: &str, name: &str) -> Result<(), CliError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(CliError::usage(format!(
            "{what} `{name}` may only contain letters, digits, `-`, `_` and `.`"
        )));
    }
    Ok(())
}

fn sanitize(raw: &str) -> String {
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '-' }).collect()
}

impl Ctx {
    fn corpus_dir(&self) -> PathBuf {
        self.workdir.join("corpus")
    }

    /// A file path, a path under the workdir, or a stored corpus name.
    fn corpus_path(&self, name: &str) -> PathBuf {
        let direct = Path::new(name);
        if direct.is_file() {
            return fs::canonicalize(direct).unwrap_or_else(|_| direct.to_path_buf());
        }
        let in_workdir = self.workdir.join(name);
        if in_workdir.is_file() {
            return in_workdir;
        }
        self.corpus_dir().join(format!("{name}.jsonl"))
    }

    fn load_corpus_at(&self, path: &Path) -> Result<Corpus, CliError> {
        if !path.is_file() {
            return Err(CliError::domain(format!("corpus file {} not found", path.display())));
        }
        let format = CorpusFormat::from_path(path).unwrap_or(CorpusFormat::Jsonl);
        Ok(load_corpus(path, format)?)
    }

    fn load_corpus(&self, name: &str) -> Result<(PathBuf, Corpus), CliError> {
        let path = self.corpus_path(name);
        let corpus = self.load_corpus_at(&path)?;
        Ok((path, corpus))
    }

    /// Workdir-relative when the corpus lives under the workdir, so stores
    /// stay valid when the workdir moves.
    fn corpus_ref(&self, path: &Path) -> PathBuf {
        if let Ok(rel) = path.strip_prefix(&self.workdir) {
            return rel.to_path_buf();
        }
        match (fs::canonicalize(path), fs::canonicalize(&self.workdir)) {
            (Ok(p), Ok(w)) => p.strip_prefix(&w).map(Path::to_path_buf).unwrap_or(p),
            _ => path.to_path_buf(),
        }
    }

    fn resolve_ref(&self, r: &Path) -> PathBuf {
        if r.is_absolute() {
            r.to_path_buf()
        } else {
            self.workdir.join(r)
        }
    }

    fn store(&self) -> RunStore {
        RunStore::new(self.workdir.join("runs"))
    }

    fn resolve_model(&self, name: &str, script: Option<&Path>) -> Result<ModelSpec, CliError> {
        if name == "mock" || name.starts_with("mock:") {
            let script = script
                .map(Path::to_path_buf)
                .or_else(|| self.config.mock.script.clone())
                .or_else(|| Some(self.workdir.join("mock-script.jsonl")).filter(|p| p.is_file()))
                .map(|p| fs::canonicalize(&p).unwrap_or(p));
            return ModelSpec::parse_mock(name, script).map_err(|e| CliError::usage(e.to_string()));
        }
        self.config.resolve_model(name)
    }
}

fn ingest(ctx: &Ctx, a: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_name("corpus name", &a.name)?;
    let format = match a.format {
        Some(FormatArg::Jsonl) => CorpusFormat::Jsonl,
        Some(FormatArg::Csv) => CorpusFormat::Csv,
        None => CorpusFormat::from_path(&a.path)
            .ok_or_else(|| CliError::usage(format!("cannot tell the format of {}; pass --format", a.path.display())))?,
    };
    let corpus = load_corpus(&a.path, format)?;
    let stats = compute_stats(&corpus)?;
    fs::create_dir_all(ctx.corpus_dir())?;
    let dest = ctx.corpus_dir().join(format!("{}.jsonl", a.name));
    corpus.write_jsonl(&dest)?;
    print_json(
        out,
        &json!({
            "name": a.name,
            "path": dest,
            "documents": corpus.len(),
            "excluded": corpus.excluded_count(),
            "stats": stats,
        }),
    )
}

fn parse_target(s: &str) -> Result<BTreeMap<Credibility, f64>, CliError> {
    let mut target = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (class, fraction) = part
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--target entry `{part}` is not <class>=<fraction>")))?;
        let class: Credibility = class.parse().map_err(CliError::usage)?;
        let fraction: f64 = fraction
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--target fraction `{fraction}` is not a number")))?;
        target.insert(class, fraction);
    }
    Ok(target)
}

fn class_counts(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for doc in corpus.documents() {
        *counts.entry(doc.credibility.to_string()).or_default() += 1;
    }
    counts
}

fn sample(ctx: &Ctx, a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_name("sample name", &a.out)?;
    let target = parse_target(&a.target)?;
    let (_, corpus) = ctx.load_corpus(&a.corpus)?;
    let sampled = stratified_sample(&corpus, a.n, &target, a.seed)?;
    fs::create_dir_all(ctx.corpus_dir())?;
    let dest = ctx.corpus_dir().join(format!("{}.jsonl", a.out));
    sampled.write_jsonl(&dest)?;
    print_json(
        out,
        &json!({ "name": a.out, "path": dest, "documents": sampled.len(), "classes": class_counts(&sampled), "seed": a.seed }),
    )
}

fn split(ctx: &Ctx, a: &SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = match a.kind {
        SplitKind::Genre => SplitSpec::Genre,
        SplitKind::Language => SplitSpec::Language {
            language: a.language.clone().ok_or_else(|| CliError::usage("--kind language needs --language"))?,
        },
        SplitKind::Temporal => {
            let cutoff = match (&a.cutoff, &a.model) {
                (Some(c), _) => c.parse().map_err(|e: corpus::CorpusError| CliError::usage(e.to_string()))?,
                (None, Some(m)) => ctx
                    .resolve_model(m, None)?
                    .cutoff
                    .ok_or_else(|| CliError::usage(format!("model `{m}` has no known cutoff; pass --cutoff")))?,
                (None, None) => return Err(CliError::usage("--kind temporal needs --cutoff or --model")),
            };
            SplitSpec::TemporalCutoff { cutoff }
        }
    };
    let (path, corpus) = ctx.load_corpus(&a.corpus)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    let (left, right) = corpus::split(&corpus, &spec)?;
    let (ln, rn) = spec.side_names();
    fs::create_dir_all(ctx.corpus_dir())?;
    let mut sides = serde_json::Map::new();
    for (name, part) in [(ln, &left), (rn, &right)] {
        let dest = ctx.corpus_dir().join(format!("{stem}.{name}.jsonl"));
        part.write_jsonl(&dest)?;
        sides.insert(name.into(), json!({ "path": dest, "documents": part.len(), "classes": class_counts(part) }));
    }
    print_json(out, &json!({ "split": spec.to_string(), "sides": sides }))
}

fn task_kind(task: TaskArg, method: Option<MethodKind>, ibi: bool, intent: Option<IntentCode>) -> Result<TaskKind, CliError> {
    let detection_only = || CliError::usage("--method and --ibi only apply to --task detect");
    match task {
        TaskArg::Detect => {
            if intent.is_some() {
                return Err(CliError::usage("--intent only applies to --task intent-binary"));
            }
            let method = method.ok_or_else(|| CliError::usage("--task detect needs --method (van, zcot or defspec)"))?;
            Ok(if ibi { TaskKind::DetectIbi(method) } else { TaskKind::DetectBaseline(method) })
        }
        TaskArg::IntentBinary => {
            if method.is_some() || ibi {
                return Err(detection_only());
            }
            let code = intent.ok_or_else(|| CliError::usage("--task intent-binary needs --intent <CODE>"))?;
            Ok(TaskKind::IntentBinary(code))
        }
        TaskArg::IntentMultilabel => {
            if method.is_some() || ibi {
                return Err(detection_only());
            }
            if intent.is_some() {
                return Err(CliError::usage("--intent only applies to --task intent-binary"));
            }
            Ok(TaskKind::IntentMultilabel)
        }
    }
}

/// `temporal` alone means the model's own knowledge cutoff.
fn resolve_split(s: &str, model: Option<&ModelSpec>) -> Result<SplitSpec, CliError> {
    if s.trim().eq_ignore_ascii_case("temporal") {
        let model = model.ok_or_else(|| CliError::usage("`temporal` needs a model; use temporal:YYYY-MM"))?;
        return model
            .cutoff
            .map(|cutoff| SplitSpec::TemporalCutoff { cutoff })
            .ok_or_else(|| CliError::usage(format!("model `{}` has no known cutoff; use temporal:YYYY-MM", model.model_id)));
    }
    s.parse().map_err(|e: corpus::CorpusError| CliError::usage(e.to_string()))
}

fn plan(ctx: &Ctx, a: &RunArgs) -> Result<RunConfig, CliError> {
    let task = task_kind(a.task, a.method, a.ibi, a.intent)?;
    let mut model = ctx.resolve_model(&a.model, a.mock_script.as_deref())?;
    if let Some(e) = &a.endpoint {
        model.endpoint = e.clone();
    }
    if let Some(env) = &a.auth_env {
        model.auth_env = env.clone();
    }
    let mut options = ctx.config.request_options();
    if a.max_tokens.is_some() {
        options.max_tokens = a.max_tokens;
    }
    if let Some(t) = a.timeout_ms {
        options.timeout_ms = t;
    }
    if let Some(r) = a.max_retries {
        options.max_retries = r;
    }
    let split = a.split.as_deref().map(|s| resolve_split(s, Some(&model))).transpose()?;
    let corpus_path = ctx.corpus_path(&a.corpus);
    let stem = corpus_path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    let run_id = match &a.run_id {
        Some(id) => {
            check_name("run id", id)?;
            id.clone()
        }
        None => {
            let suffix = split.as_ref().map(|s| format!("-{s}")).unwrap_or_default();
            sanitize(&format!("{task}-{}-{stem}{suffix}", model.model_id))
        }
    };
    let mut config = RunConfig::new(run_id, task, model, ctx.corpus_ref(&corpus_path));
    config.options = options;
    config.split = split;
    config.seed = a.seed.unwrap_or(0);
    config.concurrency = a.concurrency.unwrap_or(1);
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(config)
}

/// The run configuration `ibi run` would execute, without touching the
/// network or the run store.
pub fn plan_run(workdir: &Path, config: FileConfig, args: &RunArgs) -> Result<RunConfig, CliError> {
    plan(
        &Ctx {
            workdir: workdir.to_path_buf(),
            config,
        },
        args,
    )
}

fn run(ctx: &Ctx, a: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = plan(ctx, a)?;
    let corpus = ctx.load_corpus_at(&ctx.resolve_ref(&config.corpus_ref))?;
    let taxonomy = match &a.taxonomy {
        Some(path) => IntentTaxonomy::load(path)?,
        None => builtin_taxonomy(),
    };
    let kit = match &a.prompts {
        Some(dir) => PromptKit::from_dir(dir)?,
        None => PromptKit::builtin(),
    };
    // Mock replies are cheap and scripts change between runs, so they are
    // never cached.
    let cache = (!a.no_cache && config.model.provider != Provider::Mock).then(|| ctx.workdir.join("cache"));
    let gateway = Gateway::new(ctx.config.gateway_config(cache, a.refresh)?);
    gateway.validate(&config.model, &config.options)?;
    let pipeline = Pipeline::new(&gateway, &kit, &taxonomy);
    let store = ctx.store();
    let summary = if a.resume {
        pipeline.run_or_resume(&store, &config, &corpus)?
    } else {
        pipeline.start(&store, &config, &corpus)?
    };
    print_json(out, &summary)
}

fn classic_target(task: TaskArg, intent: Option<IntentCode>) -> Result<ClassicTarget, CliError> {
    match (task, intent) {
        (TaskArg::Detect, None) => Ok(ClassicTarget::Detection),
        (TaskArg::IntentMultilabel, None) => Ok(ClassicTarget::IntentMultilabel),
        (TaskArg::IntentBinary, Some(code)) => Ok(ClassicTarget::IntentBinary(code)),
        (TaskArg::IntentBinary, None) => Err(CliError::usage("--target intent-binary needs --intent <CODE>")),
        (_, Some(_)) => Err(CliError::usage("--intent only applies to --target intent-binary")),
    }
}

fn baseline(ctx: &Ctx, a: &BaselineArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_name("prediction name", &a.out)?;
    let target = classic_target(a.target, a.intent)?;
    let mut registry = BaselineRegistry::builtin();
    if a.lr.is_some() || a.epochs.is_some() || a.l2.is_some() || a.min_df.is_some() {
        if a.name != "logreg" {
            return Err(CliError::usage("--lr, --epochs, --l2 and --min-df only apply to logreg"));
        }
        let mut hyper = LogRegHyper::default();
        if let Some(v) = a.lr {
            hyper.lr = v;
        }
        if let Some(v) = a.epochs {
            hyper.epochs = v;
        }
        if let Some(v) = a.l2 {
            hyper.l2 = v;
        }
        registry.register(Arc::new(LogisticRegression {
            hyper,
            min_df: a.min_df.unwrap_or(1),
        }));
    }
    let chosen = registry.get(&a.name).map_err(|e| {
        CliError::usage(format!("{e}; available: {}", registry.names().collect::<Vec<_>>().join(", ")))
    })?;
    let (_, train) = ctx.load_corpus(&a.train)?;
    let (_, test) = ctx.load_corpus(&a.test)?;
    let train_docs: Vec<&Document> = train.experimental().collect();
    let test_docs: Vec<&Document> = test.experimental().collect();
    let rows = chosen.fit_predict(&train_docs, &test_docs, target, a.seed)?;
    let dir = ctx.workdir.join("predictions");
    fs::create_dir_all(&dir)?;
    let dest = dir.join(format!("{}.jsonl", a.out));
    write_interchange(&dest, &rows)?;
    let report = evaluate(&rows, &target.labels())?;
    print_json(
        out,
        &json!({ "baseline": a.name, "target": target.task_name(), "predictions": dest, "report": report }),
    )
}

struct LoadedRun {
    record: RunRecord,
    rows: Vec<PredictionRow>,
    corpus: Corpus,
}

impl LoadedRun {
    fn id(&self) -> &str {
        &self.record.config.run_id
    }

    fn task(&self) -> TaskKind {
        self.record.config.task
    }

    fn model(&self) -> &ModelSpec {
        &self.record.config.model
    }

    fn run_ref(&self) -> RunRef {
        RunRef {
            run_id: self.id().to_string(),
            config_hash: self.record.config_hash.clone(),
            parse_failures: self.rows.iter().filter(|r| r.parse_failed()).count(),
        }
    }

    fn detection_rows(&self) -> Vec<InterchangeRow> {
        interchange_from_rows(&self.rows, self.task(), false)
    }
}

fn load_run(ctx: &Ctx, id: &str) -> Result<LoadedRun, CliError> {
    let store = ctx.store();
    let record = store.load_record(id)?;
    let (_, rows) = store.load_rows(id)?;
    let corpus = ctx.load_corpus_at(&ctx.resolve_ref(&record.config.corpus_ref))?;
    Ok(LoadedRun { record, rows, corpus })
}

fn labels_for_task_name(name: &str) -> Result<Vec<String>, CliError> {
    if let Ok(task) = name.parse::<TaskKind>() {
        return Ok(task_labels(task));
    }
    name.parse::<ClassicTarget>()
        .map(ClassicTarget::labels)
        .map_err(|_| CliError::domain(format!("prediction rows carry unknown task `{name}`")))
}

fn task_arg_of(kind: TaskKind) -> TaskArg {
    match kind {
        TaskKind::DetectBaseline(_) | TaskKind::DetectIbi(_) => TaskArg::Detect,
        TaskKind::IntentBinary(_) => TaskArg::IntentBinary,
        TaskKind::IntentMultilabel => TaskArg::IntentMultilabel,
    }
}

/// Scored rows of a prediction source plus what is needed to split them.
struct Source {
    name: String,
    task: String,
    rows: Vec<InterchangeRow>,
    labels: Vec<String>,
    corpus: Option<Corpus>,
    model: Option<ModelSpec>,
    run: Option<LoadedRun>,
}

fn run_source(run: LoadedRun, task: Option<TaskArg>) -> Result<Source, CliError> {
    let kind = run.task();
    let intents = task == Some(TaskArg::IntentMultilabel) && matches!(kind, TaskKind::DetectIbi(_));
    if let Some(t) = task {
        if !intents && t != task_arg_of(kind) {
            return Err(CliError::usage(format!("run `{}` is a `{kind}` run; --task does not match", run.id())));
        }
    }
    let rows = interchange_from_rows(&run.rows, kind, intents);
    let (labels, task) = if intents {
        (task_labels(TaskKind::IntentMultilabel), TaskKind::IntentMultilabel.to_string())
    } else {
        (task_labels(kind), kind.to_string())
    };
    Ok(Source {
        name: run.id().to_string(),
        task,
        rows,
        labels,
        corpus: Some(run.corpus.clone()),
        model: Some(run.model().clone()),
        run: Some(run),
    })
}

fn prediction_source(ctx: &Ctx, path: &Path, corpus: Option<&str>) -> Result<Source, CliError> {
    let rows = read_interchange(path)?;
    let task = rows.first().map(|r| r.task.clone()).unwrap_or_else(|| "detect".into());
    let labels = labels_for_task_name(&task)?;
    let corpus = corpus.map(|c| ctx.load_corpus(c).map(|(_, c)| c)).transpose()?;
    Ok(Source {
        name: path.display().to_string(),
        task,
        rows,
        labels,
        corpus,
        model: None,
        run: None,
    })
}

fn load_source(ctx: &Ctx, run: Option<&str>, preds: Option<&Path>, corpus: Option<&str>, task: Option<TaskArg>) -> Result<Source, CliError> {
    match (run, preds) {
        (Some(id), _) => run_source(load_run(ctx, id)?, task),
        (None, Some(path)) => prediction_source(ctx, path, corpus),
        (None, None) => Err(CliError::usage("give a run id or a prediction file")),
    }
}

/// Named document-id sets for each side of a split.
fn split_sides(corpus: &Corpus, spec: &SplitSpec) -> Result<Vec<(String, BTreeSet<String>)>, CliError> {
    let (left, right) = corpus::split(corpus, spec)?;
    let (ln, rn) = spec.side_names();
    let ids = |c: &Corpus| c.documents().iter().map(|d| d.id.clone()).collect();
    Ok(vec![(ln.to_string(), ids(&left)), (rn.to_string(), ids(&right))])
}

/// Scope name and, for split sides, the document ids it covers.
type Scope = (String, Option<BTreeSet<String>>);

fn scopes(source: &Source, split: Option<&str>) -> Result<Vec<Scope>, CliError> {
    let mut out = vec![("overall".to_string(), None)];
    if let Some(s) = split {
        let spec = resolve_split(s, source.model.as_ref())?;
        let corpus = source
            .corpus
            .as_ref()
            .ok_or_else(|| CliError::usage("--split on a prediction file needs --corpus"))?;
        out.extend(split_sides(corpus, &spec)?.into_iter().map(|(n, ids)| (n, Some(ids))));
    }
    Ok(out)
}

fn restrict(rows: &[InterchangeRow], ids: Option<&BTreeSet<String>>) -> Vec<InterchangeRow> {
    rows.iter().filter(|r| ids.is_none_or(|ids| ids.contains(&r.doc_id))).cloned().collect()
}

fn conditioned(run: &LoadedRun, detection: &[InterchangeRow]) -> Result<serde_json::Value, CliError> {
    let intent_rows = interchange_from_rows(&run.rows, run.task(), true);
    let codes = |set: &BTreeSet<String>| set.iter().filter_map(|c| c.parse::<IntentCode>().ok()).collect::<BTreeSet<_>>();
    let intent_pred: BTreeMap<String, BTreeSet<IntentCode>> =
        intent_rows.iter().map(|r| (r.doc_id.clone(), codes(&r.pred))).collect();
    let gold: BTreeMap<String, BTreeSet<IntentCode>> = intent_rows.iter().map(|r| (r.doc_id.clone(), codes(&r.gold))).collect();
    let detections: Vec<_> = binary_outcomes(detection, DISINFORMATION)
        .into_iter()
        .filter(|d| intent_pred.contains_key(&d.doc_id))
        .collect();
    let results = IntentCode::ALL
        .iter()
        .map(|&code| intent_conditioned_f1(&detections, &intent_pred, &gold, code))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(serde_json::to_value(results)?)
}

fn eval(ctx: &Ctx, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let source = load_source(ctx, a.run.as_deref(), a.predictions.as_deref(), a.corpus.as_deref(), a.task)?;
    let mut results = serde_json::Map::new();
    for (name, ids) in scopes(&source, a.split.as_deref())? {
        let report = evaluate(&restrict(&source.rows, ids.as_ref()), &source.labels)?;
        results.insert(name, serde_json::to_value(report)?);
    }
    let mut body = json!({ "source": source.name, "task": source.task, "results": results });
    if let Some(run) = &source.run {
        if matches!(run.task(), TaskKind::DetectIbi(_)) && source.task == run.task().to_string() {
            body["intent_conditioned"] = conditioned(run, &source.rows)?;
        }
    }
    if let Some(path) = &a.export {
        write_interchange(path, &source.rows)?;
    }
    print_json(out, &body)
}

struct PairedScope {
    documents: usize,
    base: MetricReport,
    ibi: MetricReport,
    outcomes: PairedOutcomes,
    test: McNemarResult,
}

fn paired_scope(base: &[InterchangeRow], ibi: &[InterchangeRow], labels: &[String]) -> Result<PairedScope, CliError> {
    let preds = |rows: &[InterchangeRow]| rows.iter().map(|r| (r.doc_id.clone(), r.pred.clone())).collect::<BTreeMap<_, _>>();
    let gold: BTreeMap<String, BTreeSet<String>> = base.iter().map(|r| (r.doc_id.clone(), r.gold.clone())).collect();
    if let Some(r) = ibi.iter().find(|r| gold.get(&r.doc_id).is_some_and(|g| *g != r.gold)) {
        return Err(CliError::domain(format!("gold labels for `{}` differ between the two results", r.doc_id)));
    }
    let outcomes = pair(&preds(base), &preds(ibi), &gold)?;
    Ok(PairedScope {
        documents: gold.len(),
        base: evaluate(base, labels)?,
        ibi: evaluate(ibi, labels)?,
        outcomes,
        test: mcnemar(&outcomes),
    })
}

fn compare(ctx: &Ctx, a: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let TestArg::Mcnemar = a.test;
    let base = load_source(ctx, a.base_run.as_deref(), a.base_predictions.as_deref(), a.corpus.as_deref(), None)?;
    let ibi = load_source(ctx, a.ibi_run.as_deref(), a.ibi_predictions.as_deref(), a.corpus.as_deref(), None)?;
    if base.labels != ibi.labels {
        return Err(CliError::domain(format!(
            "`{}` scores {:?} but `{}` scores {:?}",
            base.name, base.labels, ibi.name, ibi.labels
        )));
    }
    let mut results = Vec::new();
    for (name, ids) in scopes(&base, a.split.as_deref())? {
        let s = paired_scope(&restrict(&base.rows, ids.as_ref()), &restrict(&ibi.rows, ids.as_ref()), &base.labels)?;
        results.push(json!({
            "scope": name,
            "documents": s.documents,
            "base_f1": s.base.micro_f1,
            "ibi_f1": s.ibi.micro_f1,
            "delta": delta(s.base.micro_f1, s.ibi.micro_f1),
            "outcomes": s.outcomes,
            "mcnemar": s.test,
        }));
    }
    print_json(out, &json!({ "base": base.name, "ibi": ibi.name, "test": "mcnemar", "results": results }))
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

fn comparison_entries(ctx: &Ctx, a: &ReportArgs) -> Result<Vec<ComparisonEntry>, CliError> {
    if a.runs.is_empty() {
        return Err(ReportError::EmptyRuns("pass Base and IBI runs with --runs".into()).into());
    }
    let runs = a.runs.iter().map(|id| load_run(ctx, id)).collect::<Result<Vec<_>, _>>()?;
    let (mut bases, mut ibis) = (Vec::new(), Vec::new());
    for run in &runs {
        match run.task() {
            TaskKind::DetectBaseline(m) => bases.push((m, run)),
            TaskKind::DetectIbi(m) => ibis.push((m, run)),
            other => return Err(CliError::domain(format!("run `{}` is a `{other}` run, not detection", run.id()))),
        }
    }
    let mut used = vec![false; ibis.len()];
    let mut pairs = Vec::new();
    for (method, base) in bases {
        let found = ibis.iter().enumerate().position(|(i, (m, ibi))| {
            !used[i]
                && *m == method
                && ibi.model().provider == base.model().provider
                && ibi.model().model_id == base.model().model_id
                && ibi.record.config.corpus_ref == base.record.config.corpus_ref
        });
        let i = found.ok_or_else(|| ReportError::EmptyRuns(format!("Base run `{}` has no IBI counterpart", base.id())))?;
        used[i] = true;
        pairs.push((method, base, ibis[i].1));
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(ReportError::EmptyRuns(format!("IBI run `{}` has no Base counterpart", ibis[i].1.id())).into());
    }
    let mut entries = Vec::new();
    for (method, base, ibi) in pairs {
        let mut scopes: Vec<(String, Option<BTreeSet<String>>)> = vec![("Overall".into(), None)];
        for s in &a.split {
            let spec = resolve_split(s, Some(base.model()))?;
            scopes.extend(split_sides(&base.corpus, &spec)?.into_iter().map(|(n, ids)| (capitalize(&n), Some(ids))));
        }
        let (base_rows, ibi_rows) = (base.detection_rows(), ibi.detection_rows());
        for (split, ids) in scopes {
            let s = paired_scope(
                &restrict(&base_rows, ids.as_ref()),
                &restrict(&ibi_rows, ids.as_ref()),
                &task_labels(base.task()),
            )?;
            entries.push(ComparisonEntry {
                method: method.label().to_string(),
                model: base.model().model_id.clone(),
                split,
                base_f1: s.base.micro_f1,
                ibi_f1: s.ibi.micro_f1,
                test: Some(s.test),
                base: base.run_ref(),
                ibi: ibi.run_ref(),
            });
        }
    }
    Ok(entries)
}

fn intent_entries(ctx: &Ctx, a: &ReportArgs) -> Result<Vec<IntentEntry>, CliError> {
    type Group = (BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)>, BTreeSet<String>, Vec<RunRef>, usize);
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for id in &a.runs {
        let run = load_run(ctx, id)?;
        let (setting, intents) = match run.task() {
            TaskKind::IntentBinary(_) => ("Binary".to_string(), false),
            TaskKind::IntentMultilabel => ("Multilabel".to_string(), false),
            TaskKind::DetectIbi(m) => (format!("IBI stage 1 ({})", m.label()), true),
            other => return Err(CliError::domain(format!("run `{id}` is a `{other}` run without intent predictions"))),
        };
        let labels = if intents { task_labels(TaskKind::IntentMultilabel) } else { task_labels(run.task()) };
        let group = groups.entry((run.model().model_id.clone(), setting)).or_default();
        for row in interchange_from_rows(&run.rows, run.task(), intents) {
            let slot = group.0.entry(row.doc_id).or_default();
            slot.0.extend(row.gold);
            slot.1.extend(row.pred);
            group.3 += usize::from(row.parse_failed);
        }
        group.1.extend(labels);
        group.2.push(run.run_ref());
    }
    let mut entries = Vec::new();
    for ((model, setting), (docs, labels, runs, failures)) in groups {
        let rows: Vec<InterchangeRow> = docs
            .into_iter()
            .map(|(doc_id, (gold, pred))| InterchangeRow {
                doc_id,
                task: String::new(),
                gold,
                pred,
                parse_failed: false,
            })
            .collect();
        let mut report = evaluate(&rows, &labels.into_iter().collect::<Vec<_>>())?;
        report.parse_failure_count = failures;
        entries.push(IntentEntry { model, setting, report, runs });
    }
    Ok(entries)
}

fn report_cmd(ctx: &Ctx, a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let name = a.name.clone().unwrap_or_else(|| format!("{:?}", a.kind).to_lowercase());
    check_name("report name", &name)?;
    let title = |default: &str| a.title.clone().unwrap_or_else(|| default.to_string());
    let table = match a.kind {
        ReportKind::Comparison => report::comparison_table(&title("Detection F1, Base vs IBI"), &comparison_entries(ctx, a)?)?,
        ReportKind::Distribution => {
            if a.corpus.is_empty() {
                return Err(CliError::usage("--kind distribution needs --corpus"));
            }
            let mut loaded = Vec::new();
            for item in &a.corpus {
                let (label, name) = item.split_once('=').unwrap_or((item.as_str(), item.as_str()));
                loaded.push((label.to_string(), ctx.load_corpus(name)?.1));
            }
            let refs: Vec<(&str, &Corpus)> = loaded.iter().map(|(l, c)| (l.as_str(), c)).collect();
            report::distribution_table(&title("Class distribution"), &refs)
        }
        ReportKind::Intent => {
            if a.runs.is_empty() {
                return Err(ReportError::EmptyRuns("pass intent runs with --runs".into()).into());
            }
            report::intent_table(&title("Intent classification F1"), &intent_entries(ctx, a)?)
        }
        ReportKind::Detection => {
            if a.runs.is_empty() {
                return Err(ReportError::EmptyRuns("pass detection runs with --runs".into()).into());
            }
            let mut entries = Vec::new();
            for id in &a.runs {
                let run = load_run(ctx, id)?;
                if !run.task().is_detection() {
                    return Err(CliError::domain(format!("run `{id}` is not a detection run")));
                }
                let rows = run.detection_rows();
                let setting = format!("{} {}", run.model().model_id, run.task());
                let mut scopes: Vec<(String, Option<BTreeSet<String>>)> = vec![("Overall".into(), None)];
                for s in &a.split {
                    let spec = resolve_split(s, Some(run.model()))?;
                    scopes.extend(split_sides(&run.corpus, &spec)?.into_iter().map(|(n, ids)| (capitalize(&n), Some(ids))));
                }
                for (split, ids) in scopes {
                    let report = evaluate(&restrict(&rows, ids.as_ref()), &task_labels(run.task()))?;
                    entries.push((setting.clone(), split, report, run.run_ref()));
                }
            }
            report::detection_table(&title("Detection results"), &entries)
        }
    };
    let (md, csv) = table.write(&ctx.workdir.join("reports"), &name)?;
    write!(out, "{}", table.to_markdown())?;
    writeln!(out, "\nwrote {} and {}", md.display(), csv.display())?;
    Ok(())
}
