//! Prompt composition for intent classification, baseline detection and the
//! two inoculation stages.
//!
//! Template wording lives in `resources/prompts/*.txt` and can be replaced by
//! a directory of files with the same names. Every rendered user message
//! records which span each component occupies, so tests can check component
//! order and that the spans tile the message exactly.

mod methods;
mod template;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::outparse::{render_analysis, IncompleteAnalysis, IntentAnalysis};
use crate::taxonomy::{IntentCode, IntentTaxonomy, KnowledgeBlock, TaxonomyError};

pub use methods::{InstructionMethod, MethodKind, MethodRegistry, PromptMethod};
pub use template::{Block, BlockKind, Placeholder, Template};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("expected {expected:?} guidelines, got {found:?}")]
    WrongGuidelineKind {
        expected: GuidelineKind,
        found: GuidelineKind,
    },
    #[error("guidelines are bound to {bound}, prompt requested {requested}")]
    MethodMismatch { bound: MethodKind, requested: MethodKind },
    #[error(transparent)]
    IncompleteAnalysis(#[from] IncompleteAnalysis),
    #[error("unknown prompting method `{0}`")]
    UnknownMethod(String),
    #[error("threat preamble is empty")]
    EmptyThreat,
    #[error("template {template}: {reason}")]
    Template { template: String, reason: String },
    #[error("cannot read template directory: {0}")]
    Io(#[from] std::io::Error),
}

/// A system message and a user message, with component spans for the user
/// message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub blocks: Vec<Block>,
}

impl RenderedPrompt {
    /// Component kinds in the order they appear.
    pub fn components(&self) -> Vec<BlockKind> {
        self.blocks
            .iter()
            .map(|b| b.kind)
            .filter(|k| k.is_component())
            .collect()
    }

    pub fn block_texts(&self, kind: BlockKind) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| &self.user[b.span.clone()])
            .collect()
    }

    /// Concatenation of all block spans; equals `user` for a well-formed prompt.
    pub fn reconstruct(&self) -> String {
        self.blocks.iter().map(|b| &self.user[b.span.clone()]).collect()
    }
}

/// Warning that the text may hide malicious intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatPreamble {
    text: String,
}

impl ThreatPreamble {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text: String = text.into();
        let text = text.trim_end().to_string();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyThreat);
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidelineKind {
    AnalysisGuidelines,
    DetectionGuidelines,
}

/// Task guidance. Analysis guidelines carry an `{ANSWER_TEMPLATE}` slot,
/// detection guidelines exactly one `{METHOD_BLOCK}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidelineBlock {
    pub kind: GuidelineKind,
    pub method: Option<MethodKind>,
    template: Template,
}

impl GuidelineBlock {
    pub fn analysis(text: &str) -> Result<Self, PromptError> {
        let template = Template::parse("analysis guidelines", text)?;
        if template.count(Placeholder::AnswerTemplate) != 1 {
            return Err(PromptError::Template {
                template: template.name().to_string(),
                reason: "analysis guidelines need exactly one {ANSWER_TEMPLATE}".into(),
            });
        }
        Ok(Self {
            kind: GuidelineKind::AnalysisGuidelines,
            method: None,
            template,
        })
    }

    pub fn detection(text: &str) -> Result<Self, PromptError> {
        let template = Template::parse("detection guidelines", text)?;
        if template.count(Placeholder::MethodBlock) != 1 {
            return Err(PromptError::Template {
                template: template.name().to_string(),
                reason: "detection guidelines need exactly one {METHOD_BLOCK}".into(),
            });
        }
        Ok(Self {
            kind: GuidelineKind::DetectionGuidelines,
            method: None,
            template,
        })
    }

    /// Pins detection guidelines to one method.
    pub fn for_method(mut self, method: MethodKind) -> Self {
        self.method = Some(method);
        self
    }

    fn expect_kind(&self, expected: GuidelineKind) -> Result<(), PromptError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(PromptError::WrongGuidelineKind {
                expected,
                found: self.kind,
            })
        }
    }
}

const RESOURCES: [(&str, &str); 15] = [
    ("intent_binary.system.txt", include_str!("../../resources/prompts/intent_binary.system.txt")),
    ("intent_binary.user.txt", include_str!("../../resources/prompts/intent_binary.user.txt")),
    ("intent_multilabel.system.txt", include_str!("../../resources/prompts/intent_multilabel.system.txt")),
    ("intent_multilabel.user.txt", include_str!("../../resources/prompts/intent_multilabel.user.txt")),
    ("intent_analysis.system.txt", include_str!("../../resources/prompts/intent_analysis.system.txt")),
    ("intent_analysis.user.txt", include_str!("../../resources/prompts/intent_analysis.user.txt")),
    ("analysis_guidelines.txt", include_str!("../../resources/prompts/analysis_guidelines.txt")),
    ("detection.system.txt", include_str!("../../resources/prompts/detection.system.txt")),
    ("detection_baseline.user.txt", include_str!("../../resources/prompts/detection_baseline.user.txt")),
    ("detection_guidelines.txt", include_str!("../../resources/prompts/detection_guidelines.txt")),
    ("threat.txt", include_str!("../../resources/prompts/threat.txt")),
    ("inoculated.user.txt", include_str!("../../resources/prompts/inoculated.user.txt")),
    ("method_van.txt", include_str!("../../resources/prompts/method_van.txt")),
    ("method_zcot.txt", include_str!("../../resources/prompts/method_zcot.txt")),
    ("method_defspec.txt", include_str!("../../resources/prompts/method_defspec.txt")),
];

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map(|w| w.to_string()).unwrap_or_else(|| n.to_string())
}

/// All templates plus the default threat, guidelines and method registry.
#[derive(Debug, Clone)]
pub struct PromptKit {
    version: String,
    binary_system: Template,
    binary_user: Template,
    multilabel_system: Template,
    multilabel_user: Template,
    analysis_system: Template,
    analysis_user: Template,
    detection_system: Template,
    baseline_user: Template,
    inoculated_user: Template,
    threat: ThreatPreamble,
    analysis_guidelines: GuidelineBlock,
    detection_guidelines: GuidelineBlock,
    methods: MethodRegistry,
}

impl PromptKit {
    /// The templates compiled into the crate.
    pub fn builtin() -> Self {
        Self::from_sources(|_| Ok(None)).expect("built-in prompt resources are valid")
    }

    /// Templates read from `dir`; files absent there fall back to the
    /// built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::from_sources(|name| {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(std::fs::read_to_string(path)?))
            } else {
                Ok(None)
            }
        })
    }

    fn from_sources<F>(load: F) -> Result<Self, PromptError>
    where
        F: Fn(&str) -> Result<Option<String>, PromptError>,
    {
        let mut sources = Vec::with_capacity(RESOURCES.len());
        for (name, builtin) in RESOURCES {
            sources.push((name, load(name)?.unwrap_or_else(|| builtin.to_string())));
        }
        let source = |name: &str| -> &str {
            &sources.iter().find(|(n, _)| *n == name).expect("known resource").1
        };
        let template = |name: &str| Template::parse(name, source(name));

        let mut fingerprint = String::new();
        for (name, text) in &sources {
            fingerprint.push_str(name);
            fingerprint.push('\0');
            fingerprint.push_str(text);
            fingerprint.push('\0');
        }

        let mut methods = MethodRegistry::new();
        for (kind, name) in [
            (MethodKind::VaN, "method_van.txt"),
            (MethodKind::ZCoT, "method_zcot.txt"),
            (MethodKind::DeFSpeC, "method_defspec.txt"),
        ] {
            methods.register(Arc::new(InstructionMethod::new(kind, source(name))));
        }

        Ok(Self {
            version: format!("prompts-{}", &sha256_hex(fingerprint.as_bytes())[..12]),
            binary_system: template("intent_binary.system.txt")?,
            binary_user: template("intent_binary.user.txt")?,
            multilabel_system: template("intent_multilabel.system.txt")?,
            multilabel_user: template("intent_multilabel.user.txt")?,
            analysis_system: template("intent_analysis.system.txt")?,
            analysis_user: template("intent_analysis.user.txt")?,
            detection_system: template("detection.system.txt")?,
            baseline_user: template("detection_baseline.user.txt")?,
            inoculated_user: template("inoculated.user.txt")?,
            threat: ThreatPreamble::new(source("threat.txt"))?,
            analysis_guidelines: GuidelineBlock::analysis(source("analysis_guidelines.txt"))?,
            detection_guidelines: GuidelineBlock::detection(source("detection_guidelines.txt"))?,
            methods,
        })
    }

    /// Content hash of every template; changes whenever any wording changes.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn threat(&self) -> &ThreatPreamble {
        &self.threat
    }

    pub fn analysis_guidelines(&self) -> &GuidelineBlock {
        &self.analysis_guidelines
    }

    pub fn detection_guidelines(&self) -> &GuidelineBlock {
        &self.detection_guidelines
    }

    pub fn methods(&self) -> &MethodRegistry {
        &self.methods
    }

    pub fn methods_mut(&mut self) -> &mut MethodRegistry {
        &mut self.methods
    }

    fn system(template: &Template, bind: impl Fn(Placeholder) -> Option<String>) -> Result<String, PromptError> {
        let values: Vec<(Placeholder, String)> = [
            Placeholder::IntentName,
            Placeholder::Code,
            Placeholder::IntentCount,
            Placeholder::IntentList,
        ]
        .into_iter()
        .filter_map(|p| bind(p).map(|v| (p, v)))
        .collect();
        template.render_text(|p| values.iter().find(|(q, _)| *q == p).map(|(_, v)| v.as_str()))
    }

    /// Single-intent Yes/No classification prompt.
    pub fn binary_intent(
        &self,
        taxonomy: &IntentTaxonomy,
        code: IntentCode,
        text: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let category = taxonomy.lookup(code)?;
        let name = category.prompt_name();
        let code_str = code.as_str();
        let answer = format!(
            "{{\n    \"{code_str}\": \"Your answer if text include {name} intent. Use only Yes or No\"\n}}"
        );
        let system = Self::system(&self.binary_system, |p| match p {
            Placeholder::IntentName => Some(name.clone()),
            Placeholder::Code => Some(code_str.to_string()),
            _ => None,
        })?;
        let (user, blocks) = self.binary_user.render(|p| match p {
            Placeholder::IntentName => Some((BlockKind::Field, name.as_str())),
            Placeholder::Code => Some((BlockKind::Field, code_str)),
            Placeholder::AnswerTemplate => Some((BlockKind::AnswerTemplate, answer.as_str())),
            Placeholder::Text => Some((BlockKind::Text, text)),
            _ => None,
        })?;
        Ok(RenderedPrompt { system, user, blocks })
    }

    /// All-categories Yes/No classification prompt.
    pub fn multilabel_intent(&self, taxonomy: &IntentTaxonomy, text: &str) -> Result<RenderedPrompt, PromptError> {
        let categories = taxonomy.categories();
        let list = categories
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {} [{}]", i + 1, c.prompt_name(), c.code))
            .collect::<Vec<_>>()
            .join("\n");
        let inline = categories
            .iter()
            .map(|c| format!("    {} [{}]", c.prompt_name(), c.code))
            .collect::<Vec<_>>()
            .join(",\n");
        let answer = format!(
            "{{\n{}\n}}",
            categories
                .iter()
                .map(|c| format!(
                    "    \"{}\": \"Your answer if text include {} intent. Use only Yes or No\"",
                    c.code,
                    c.prompt_name()
                ))
                .collect::<Vec<_>>()
                .join(",\n")
        );
        let system = Self::system(&self.multilabel_system, |p| match p {
            Placeholder::IntentCount => Some(number_word(categories.len())),
            Placeholder::IntentList => Some(list.clone()),
            _ => None,
        })?;
        let (user, blocks) = self.multilabel_user.render(|p| match p {
            Placeholder::IntentInline => Some((BlockKind::Field, inline.as_str())),
            Placeholder::AnswerTemplate => Some((BlockKind::AnswerTemplate, answer.as_str())),
            Placeholder::Text => Some((BlockKind::Text, text)),
            _ => None,
        })?;
        Ok(RenderedPrompt { system, user, blocks })
    }

    /// Zero-shot detection prompt for one of the baseline methods.
    pub fn baseline(&self, method: MethodKind, text: &str) -> Result<RenderedPrompt, PromptError> {
        let block = self.methods.get(method)?.instruction_block();
        let system = Self::system(&self.detection_system, |_| None)?;
        let (user, blocks) = self.baseline_user.render(|p| match p {
            Placeholder::MethodBlock => Some((BlockKind::MethodInstructions, block)),
            Placeholder::Text => Some((BlockKind::Text, text)),
            _ => None,
        })?;
        Ok(RenderedPrompt { system, user, blocks })
    }

    /// First inoculation stage: knowledge, analysis guidelines, then the text.
    pub fn intent_analysis(
        &self,
        taxonomy: &IntentTaxonomy,
        knowledge: &KnowledgeBlock,
        guidelines: &GuidelineBlock,
        text: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        guidelines.expect_kind(GuidelineKind::AnalysisGuidelines)?;
        let answer = format!(
            "{{\n{}\n}}",
            taxonomy
                .categories()
                .iter()
                .map(|c| format!(
                    "    \"{}\": {{\"answer\": \"Yes or No\", \"rationale\": \"Why the text does or does not contain {} intent\"}}",
                    c.code,
                    c.prompt_name()
                ))
                .collect::<Vec<_>>()
                .join(",\n")
        );
        let guidance = guidelines
            .template
            .render_text(|p| (p == Placeholder::AnswerTemplate).then_some(answer.as_str()))?;
        let knowledge_text = knowledge.text();
        let system = Self::system(&self.analysis_system, |_| None)?;
        let (user, blocks) = self.analysis_user.render(|p| match p {
            Placeholder::Knowledge => Some((BlockKind::Knowledge, knowledge_text.as_str())),
            Placeholder::Guidelines => Some((BlockKind::AnalysisGuidelines, guidance.as_str())),
            Placeholder::Text => Some((BlockKind::Text, text)),
            _ => None,
        })?;
        Ok(RenderedPrompt { system, user, blocks })
    }

    /// Second inoculation stage: threat, the stage-one analysis, the text,
    /// then detection guidelines embedding the method's instructions.
    pub fn inoculated(
        &self,
        taxonomy: &IntentTaxonomy,
        threat: &ThreatPreamble,
        analysis: &IntentAnalysis,
        guidelines: &GuidelineBlock,
        method: MethodKind,
        text: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        guidelines.expect_kind(GuidelineKind::DetectionGuidelines)?;
        if let Some(bound) = guidelines.method {
            if bound != method {
                return Err(PromptError::MethodMismatch {
                    bound,
                    requested: method,
                });
            }
        }
        let analysis_text = render_analysis(analysis, taxonomy)?;
        let block = self.methods.get(method)?.instruction_block();
        let guidance = guidelines
            .template
            .render_text(|p| (p == Placeholder::MethodBlock).then_some(block))?;
        let system = Self::system(&self.detection_system, |_| None)?;
        let (user, blocks) = self.inoculated_user.render(|p| match p {
            Placeholder::Threat => Some((BlockKind::Threat, threat.text())),
            Placeholder::Analysis => Some((BlockKind::Analysis, analysis_text.as_str())),
            Placeholder::Text => Some((BlockKind::Text, text)),
            Placeholder::Guidelines => Some((BlockKind::DetectionGuidelines, guidance.as_str())),
            _ => None,
        })?;
        Ok(RenderedPrompt { system, user, blocks })
    }
}

impl Default for PromptKit {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outparse::Verdict;
    use crate::taxonomy::{builtin_taxonomy, render_knowledge_block};

    const TEXT: &str = "The ministry hides the real vaccine data from citizens.";

    fn kit() -> PromptKit {
        PromptKit::builtin()
    }

    fn analysis() -> IntentAnalysis {
        let mut a = IntentAnalysis::all_no(&IntentCode::ALL);
        a.insert(IntentCode::Ucpi, Verdict::Yes, "Accuses the ministry of hiding data.");
        a
    }

    #[test]
    fn binary_prompt_follows_intent_template() {
        let p = kit().binary_intent(&builtin_taxonomy(), IntentCode::Ucpi, TEXT).unwrap();
        assert!(p.system.ends_with("one malicious intention:\nUndermining the credibility of public institutions [UCPI]"));
        assert!(p.user.contains("\"UCPI\": \"Your answer if text include Undermining the credibility of public institutions intent. Use only Yes or No\""));
        assert!(p.user.contains("when you are not fully sure you answer No"));
        assert!(p.user.ends_with(&format!("Text: {TEXT}")));
        assert_eq!(p.reconstruct(), p.user);
    }

    #[test]
    fn binary_prompt_rejects_code_outside_taxonomy() {
        let taxonomy = IntentTaxonomy::from_json(r#"[{"code":"CPV","name":"x","definition":"y"}]"#).unwrap();
        assert!(matches!(
            kit().binary_intent(&taxonomy, IntentCode::Ucpi, TEXT),
            Err(PromptError::Taxonomy(TaxonomyError::UnknownIntentCode(_)))
        ));
    }

    #[test]
    fn multilabel_prompt_has_five_keys_in_order() {
        let p = kit().multilabel_intent(&builtin_taxonomy(), TEXT).unwrap();
        let answer = p.block_texts(BlockKind::AnswerTemplate)[0];
        let positions: Vec<usize> = IntentCode::ALL
            .iter()
            .map(|c| answer.find(&format!("\"{c}\":")).expect("key present"))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(answer.matches("Use only Yes or No").count(), 5);
        assert!(p.system.contains("detecting five different malicious intentions"));
        assert!(p.user.contains("Give your answer in the form of dictionary"));
        assert_eq!(p, kit().multilabel_intent(&builtin_taxonomy(), TEXT).unwrap());
    }

    #[test]
    fn baseline_method_blocks_differ() {
        let k = kit();
        let van = k.baseline(MethodKind::VaN, TEXT).unwrap();
        let zcot = k.baseline(MethodKind::ZCoT, TEXT).unwrap();
        let defspec = k.baseline(MethodKind::DeFSpeC, TEXT).unwrap();
        assert!(zcot.user.contains("step by step"));
        assert!(!van.user.to_lowercase().contains("step"));
        assert!(!van.user.to_lowercase().contains("reasoning"));
        assert!(defspec.user.contains("Abduction"));
        assert!(defspec.user.contains("Deduction"));
        assert_eq!(van.components(), [BlockKind::MethodInstructions, BlockKind::Text]);
        assert_eq!(van, k.baseline(MethodKind::VaN, TEXT).unwrap());
        assert!(!van.user.contains("not fully sure"));
    }

    #[test]
    fn analysis_prompt_orders_knowledge_guidelines_text() {
        let k = kit();
        let taxonomy = builtin_taxonomy();
        let p = k
            .intent_analysis(&taxonomy, &render_knowledge_block(&taxonomy), k.analysis_guidelines(), TEXT)
            .unwrap();
        assert_eq!(
            p.components(),
            [BlockKind::Knowledge, BlockKind::AnalysisGuidelines, BlockKind::Text]
        );
        for category in taxonomy.categories() {
            assert!(p.user.contains(&category.definition));
        }
        assert_eq!(p.reconstruct(), p.user);
    }

    #[test]
    fn analysis_prompt_rejects_detection_guidelines() {
        let k = kit();
        let taxonomy = builtin_taxonomy();
        assert!(matches!(
            k.intent_analysis(&taxonomy, &render_knowledge_block(&taxonomy), k.detection_guidelines(), TEXT),
            Err(PromptError::WrongGuidelineKind { .. })
        ));
    }

    #[test]
    fn inoculated_prompt_orders_components() {
        let k = kit();
        let taxonomy = builtin_taxonomy();
        let p = k
            .inoculated(&taxonomy, k.threat(), &analysis(), k.detection_guidelines(), MethodKind::DeFSpeC, TEXT)
            .unwrap();
        assert_eq!(
            p.components(),
            [BlockKind::Threat, BlockKind::Analysis, BlockKind::Text, BlockKind::DetectionGuidelines]
        );
        assert_eq!(p.block_texts(BlockKind::Threat).len(), 1);
        assert_eq!(p.block_texts(BlockKind::Analysis).len(), 1);
        let guidance = p.block_texts(BlockKind::DetectionGuidelines)[0];
        let defspec = k.methods().get(MethodKind::DeFSpeC).unwrap().instruction_block();
        assert_eq!(guidance.matches(defspec).count(), 1);
        assert!(p.block_texts(BlockKind::Analysis)[0]
            .contains("[UCPI]: Yes — Accuses the ministry of hiding data."));
        assert_eq!(p.reconstruct(), p.user);
    }

    #[test]
    fn inoculated_prompt_errors() {
        let k = kit();
        let taxonomy = builtin_taxonomy();
        let mut partial = IntentAnalysis::all_no(&IntentCode::ALL[..4]);
        partial.insert(IntentCode::Ucpi, Verdict::Yes, "");
        match k.inoculated(&taxonomy, k.threat(), &partial, k.detection_guidelines(), MethodKind::VaN, TEXT) {
            Err(PromptError::IncompleteAnalysis(IncompleteAnalysis(missing))) => {
                assert_eq!(missing, vec![IntentCode::Pasv])
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            k.inoculated(&taxonomy, k.threat(), &analysis(), k.analysis_guidelines(), MethodKind::VaN, TEXT),
            Err(PromptError::WrongGuidelineKind { .. })
        ));
        let pinned = k.detection_guidelines().clone().for_method(MethodKind::ZCoT);
        assert!(matches!(
            k.inoculated(&taxonomy, k.threat(), &analysis(), &pinned, MethodKind::VaN, TEXT),
            Err(PromptError::MethodMismatch { .. })
        ));
        assert!(ThreatPreamble::new("  \n").is_err());
    }

    #[test]
    fn threat_and_analysis_change_the_prompt() {
        let k = kit();
        let taxonomy = builtin_taxonomy();
        let base = k
            .inoculated(&taxonomy, k.threat(), &analysis(), k.detection_guidelines(), MethodKind::VaN, TEXT)
            .unwrap();
        let other_threat = ThreatPreamble::new("Careful.").unwrap();
        let with_other_threat = k
            .inoculated(&taxonomy, &other_threat, &analysis(), k.detection_guidelines(), MethodKind::VaN, TEXT)
            .unwrap();
        let all_no = k
            .inoculated(
                &taxonomy,
                k.threat(),
                &IntentAnalysis::all_no(&IntentCode::ALL),
                k.detection_guidelines(),
                MethodKind::VaN,
                TEXT,
            )
            .unwrap();
        assert_ne!(base.user, with_other_threat.user);
        assert_ne!(base.user, all_no.user);
        assert_ne!(base.user, k.baseline(MethodKind::VaN, TEXT).unwrap().user);
    }

    #[test]
    fn guideline_validation() {
        assert!(GuidelineBlock::detection("no slot here").is_err());
        assert!(GuidelineBlock::detection("{METHOD_BLOCK}\n{METHOD_BLOCK}").is_err());
        assert!(GuidelineBlock::analysis("nothing").is_err());
    }

    #[test]
    fn directory_override_changes_version() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("threat.txt"), "Beware of hidden intent.\n").unwrap();
        let custom = PromptKit::from_dir(dir.path()).unwrap();
        assert_eq!(custom.threat().text(), "Beware of hidden intent.");
        assert_ne!(custom.version(), kit().version());
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(PromptKit::from_dir(empty.path()).unwrap().version(), kit().version());
    }
}
