//! Plain-text templates with `{NAME}` placeholders.
//!
//! Only upper-case names are placeholders, so JSON braces in answer templates
//! pass through untouched. Rendering records the byte span of every literal
//! run and every substituted value.

use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    Text,
    Knowledge,
    Analysis,
    Threat,
    MethodBlock,
    Guidelines,
    IntentName,
    Code,
    IntentCount,
    IntentList,
    IntentInline,
    AnswerTemplate,
}

impl Placeholder {
    const NAMES: [(&'static str, Placeholder); 12] = [
        ("TEXT", Placeholder::Text),
        ("KNOWLEDGE", Placeholder::Knowledge),
        ("ANALYSIS", Placeholder::Analysis),
        ("THREAT", Placeholder::Threat),
        ("METHOD_BLOCK", Placeholder::MethodBlock),
        ("GUIDELINES", Placeholder::Guidelines),
        ("INTENT_NAME", Placeholder::IntentName),
        ("CODE", Placeholder::Code),
        ("INTENT_COUNT", Placeholder::IntentCount),
        ("INTENT_LIST", Placeholder::IntentList),
        ("INTENT_INLINE", Placeholder::IntentInline),
        ("ANSWER_TEMPLATE", Placeholder::AnswerTemplate),
    ];

    fn from_name(name: &str) -> Option<Self> {
        Self::NAMES.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
    }

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, p)| *p == self).map(|(n, _)| *n).expect("listed")
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.name())
    }
}

/// What a span of a rendered user message holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Fixed template wording.
    Literal,
    /// A short substituted value (intent name, code, count, listing).
    Field,
    AnswerTemplate,
    Text,
    Knowledge,
    AnalysisGuidelines,
    Threat,
    Analysis,
    DetectionGuidelines,
    MethodInstructions,
}

impl BlockKind {
    /// Prompt components, as opposed to template glue.
    pub fn is_component(self) -> bool {
        !matches!(self, BlockKind::Literal | BlockKind::Field | BlockKind::AnswerTemplate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    segments: Vec<Segment>,
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z_]*)\}").expect("valid regex"))
}

impl Template {
    /// Parses `source`, dropping one trailing newline.
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let source = source.strip_suffix('\n').unwrap_or(source);
        let mut segments = Vec::new();
        let mut last = 0;
        for caps in placeholder_regex().captures_iter(source) {
            let whole = caps.get(0).expect("match");
            let placeholder = Placeholder::from_name(&caps[1]).ok_or_else(|| PromptError::Template {
                template: name.to_string(),
                reason: format!("unknown placeholder {{{}}}", &caps[1]),
            })?;
            if whole.start() > last {
                segments.push(Segment::Literal(source[last..whole.start()].to_string()));
            }
            segments.push(Segment::Slot(placeholder));
            last = whole.end();
        }
        if last < source.len() {
            segments.push(Segment::Literal(source[last..].to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            segments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn count(&self, placeholder: Placeholder) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Slot(p) if *p == placeholder))
            .count()
    }

    /// Fills every slot from `bind`, which returns the value and the block kind
    /// to record for it.
    pub fn render<'a, F>(&self, bind: F) -> Result<(String, Vec<Block>), PromptError>
    where
        F: Fn(Placeholder) -> Option<(BlockKind, &'a str)>,
    {
        let mut out = String::new();
        let mut blocks = Vec::with_capacity(self.segments.len());
        for segment in &self.segments {
            let (kind, value) = match segment {
                Segment::Literal(text) => (BlockKind::Literal, text.as_str()),
                Segment::Slot(p) => bind(*p).ok_or_else(|| PromptError::Template {
                    template: self.name.clone(),
                    reason: format!("no value bound for {p}"),
                })?,
            };
            let start = out.len();
            out.push_str(value);
            blocks.push(Block {
                kind,
                span: start..out.len(),
            });
        }
        Ok((out, blocks))
    }

    /// Renders to a plain string, discarding spans.
    pub fn render_text<'a, F>(&self, bind: F) -> Result<String, PromptError>
    where
        F: Fn(Placeholder) -> Option<&'a str>,
    {
        self.render(|p| bind(p).map(|v| (BlockKind::Field, v))).map(|(text, _)| text)
    }
}
