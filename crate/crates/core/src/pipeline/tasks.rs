//! Per-document task strategies, selected by task name.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{Execution, Parsed, PredictionRow, TaskKind, Timing};
use crate::corpus::Document;
use crate::gateway::{Gateway, ModelSpec, RequestOptions, RequestTag, Stage};
use crate::outparse::{parse_detection_reply, parse_intent_reply, IntentAnalysis, ParseStatus};
use crate::promptkit::{PromptError, PromptKit, RenderedPrompt};
use crate::taxonomy::{IntentTaxonomy, KnowledgeBlock};

/// Shared, read-only inputs for one run.
pub struct TaskContext<'a> {
    pub gateway: &'a Gateway,
    pub kit: &'a PromptKit,
    pub taxonomy: &'a IntentTaxonomy,
    pub knowledge: &'a KnowledgeBlock,
    pub model: &'a ModelSpec,
    pub options: &'a RequestOptions,
    pub task: &'a TaskKind,
}

/// Completed (non-error) rows already stored for a document.
#[derive(Debug, Default, Clone, Copy)]
pub struct PriorRows<'a> {
    pub intent: Option<&'a PredictionRow>,
    pub detection: Option<&'a PredictionRow>,
}

impl<'a> PriorRows<'a> {
    pub fn get(&self, stage: Stage) -> Option<&'a PredictionRow> {
        match stage {
            Stage::IntentAnalysis => self.intent,
            Stage::Detection => self.detection,
        }
    }
}

pub trait TaskStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Stages that produce one row each per document.
    fn stages(&self) -> &'static [Stage];

    /// Executes the stages of `doc` that have no completed row in `prior`.
    fn run_document(&self, ctx: &TaskContext<'_>, doc: &Document, prior: &PriorRows<'_>) -> Vec<Execution>;
}

#[derive(Clone, Default)]
pub struct TaskRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn TaskStrategy>>,
}

impl fmt::Debug for TaskRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.strategies.keys()).finish()
    }
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut registry = Self::new();
        registry.register(Arc::new(IntentBinaryTask));
        registry.register(Arc::new(IntentMultilabelTask));
        registry.register(Arc::new(DetectBaselineTask));
        registry.register(Arc::new(DetectIbiTask));
        registry
    }

    pub fn register(&mut self, strategy: Arc<dyn TaskStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn TaskStrategy>> {
        self.strategies.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}

fn base_row(ctx: &TaskContext<'_>, doc: &Document, stage: Stage) -> PredictionRow {
    PredictionRow {
        doc_id: doc.id.clone(),
        task: ctx.task.to_string(),
        stage,
        prompt_digest: None,
        reply: None,
        parsed: None,
        parse_status: None,
        gold_credibility: doc.credibility,
        gold_intents: doc.intents.clone(),
        analysis: None,
        degraded: false,
        error: None,
    }
}

/// Sends one prompt. On success the row carries digest and reply; on failure
/// it carries the error and the reply is `None`.
fn exchange(
    ctx: &TaskContext<'_>,
    doc: &Document,
    stage: Stage,
    prompt: Result<RenderedPrompt, PromptError>,
) -> (PredictionRow, Option<Timing>, Option<String>) {
    let mut row = base_row(ctx, doc, stage);
    let prompt = match prompt {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(format!("prompt: {e}"));
            return (row, None, None);
        }
    };
    let tag = RequestTag::new(doc.id.clone(), stage);
    match ctx.gateway.complete(&prompt, ctx.model, ctx.options, &tag) {
        Ok(ex) => {
            let timing = Timing {
                doc_id: doc.id.clone(),
                stage,
                latency_ms: ex.latency.as_secs_f64() * 1000.0,
                attempt_count: ex.attempt_count,
                from_cache: ex.from_cache,
            };
            row.prompt_digest = Some(ex.prompt_digest);
            row.reply = Some(ex.reply.clone());
            (row, Some(timing), Some(ex.reply))
        }
        Err(e) => {
            tracing::warn!(doc = %doc.id, ?stage, error = %e, "request failed");
            row.error = Some(e.to_string());
            (row, None, None)
        }
    }
}

fn intent_row(
    ctx: &TaskContext<'_>,
    doc: &Document,
    prompt: Result<RenderedPrompt, PromptError>,
    expected: &[crate::taxonomy::IntentCode],
) -> Execution {
    let (mut row, timing, reply) = exchange(ctx, doc, Stage::IntentAnalysis, prompt);
    if let Some(reply) = reply {
        let (analysis, outcome) = parse_intent_reply(&reply, expected);
        row.parsed = Some(Parsed::Intents(analysis));
        row.parse_status = Some(outcome);
    }
    Execution { row, timing }
}

fn detection_row(
    ctx: &TaskContext<'_>,
    doc: &Document,
    prompt: Result<RenderedPrompt, PromptError>,
) -> (PredictionRow, Option<Timing>) {
    let (mut row, timing, reply) = exchange(ctx, doc, Stage::Detection, prompt);
    if let Some(reply) = reply {
        let (verdict, outcome) = parse_detection_reply(&reply);
        row.parsed = Some(Parsed::Detection(verdict));
        row.parse_status = Some(outcome);
    }
    (row, timing)
}

pub struct IntentBinaryTask;

impl TaskStrategy for IntentBinaryTask {
    fn name(&self) -> &'static str {
        "intent-binary"
    }

    fn stages(&self) -> &'static [Stage] {
        &[Stage::IntentAnalysis]
    }

    fn run_document(&self, ctx: &TaskContext<'_>, doc: &Document, _prior: &PriorRows<'_>) -> Vec<Execution> {
        let TaskKind::IntentBinary(code) = *ctx.task else {
            unreachable!("strategy selected by task name")
        };
        let prompt = ctx.kit.binary_intent(ctx.taxonomy, code, &doc.text);
        vec![intent_row(ctx, doc, prompt, &[code])]
    }
}

pub struct IntentMultilabelTask;

impl TaskStrategy for IntentMultilabelTask {
    fn name(&self) -> &'static str {
        "intent-multilabel"
    }

    fn stages(&self) -> &'static [Stage] {
        &[Stage::IntentAnalysis]
    }

    fn run_document(&self, ctx: &TaskContext<'_>, doc: &Document, _prior: &PriorRows<'_>) -> Vec<Execution> {
        let prompt = ctx.kit.multilabel_intent(ctx.taxonomy, &doc.text);
        vec![intent_row(ctx, doc, prompt, &ctx.taxonomy.codes())]
    }
}

pub struct DetectBaselineTask;

impl TaskStrategy for DetectBaselineTask {
    fn name(&self) -> &'static str {
        "detect-baseline"
    }

    fn stages(&self) -> &'static [Stage] {
        &[Stage::Detection]
    }

    fn run_document(&self, ctx: &TaskContext<'_>, doc: &Document, _prior: &PriorRows<'_>) -> Vec<Execution> {
        let TaskKind::DetectBaseline(method) = *ctx.task else {
            unreachable!("strategy selected by task name")
        };
        let (row, timing) = detection_row(ctx, doc, ctx.kit.baseline(method, &doc.text));
        vec![Execution { row, timing }]
    }
}

/// Two stages: intent analysis, then detection with the inoculated prompt.
pub struct DetectIbiTask;

impl DetectIbiTask {
    /// Analysis to embed in stage two. Falls back to all-No, flagged as
    /// degraded, when stage one failed to produce a usable analysis.
    fn usable_analysis(ctx: &TaskContext<'_>, stage_one: &PredictionRow) -> (IntentAnalysis, bool) {
        let codes = ctx.taxonomy.codes();
        let failed = stage_one.error.is_some()
            || stage_one.parse_status.as_ref().is_none_or(|o| o.status == ParseStatus::Failed);
        match &stage_one.parsed {
            Some(Parsed::Intents(analysis)) if !failed && analysis.missing(&codes).is_empty() => {
                (analysis.clone(), false)
            }
            _ => (IntentAnalysis::all_no(&codes), true),
        }
    }
}

impl TaskStrategy for DetectIbiTask {
    fn name(&self) -> &'static str {
        "detect-ibi"
    }

    fn stages(&self) -> &'static [Stage] {
        &[Stage::IntentAnalysis, Stage::Detection]
    }

    fn run_document(&self, ctx: &TaskContext<'_>, doc: &Document, prior: &PriorRows<'_>) -> Vec<Execution> {
        let TaskKind::DetectIbi(method) = *ctx.task else {
            unreachable!("strategy selected by task name")
        };
        let mut out = Vec::with_capacity(2);
        // Stage two is only reused together with the stage-one row it embeds.
        let stage_one = match prior.intent {
            Some(_) if prior.detection.is_some() => return out,
            Some(row) => row.clone(),
            None => {
                let prompt = ctx.kit.intent_analysis(
                    ctx.taxonomy,
                    ctx.knowledge,
                    ctx.kit.analysis_guidelines(),
                    &doc.text,
                );
                let exec = intent_row(ctx, doc, prompt, &ctx.taxonomy.codes());
                let row = exec.row.clone();
                out.push(exec);
                row
            }
        };
        let (analysis, degraded) = Self::usable_analysis(ctx, &stage_one);
        let prompt = ctx.kit.inoculated(
            ctx.taxonomy,
            ctx.kit.threat(),
            &analysis,
            ctx.kit.detection_guidelines(),
            method,
            &doc.text,
        );
        let (mut row, timing) = detection_row(ctx, doc, prompt);
        row.analysis = Some(analysis);
        row.degraded = degraded;
        out.push(Execution { row, timing });
        out
    }
}
