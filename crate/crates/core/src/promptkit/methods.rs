//! Detection prompting methods, registered by name.
//!
//! Each method contributes the block of method-specific instructions that a
//! baseline prompt carries on its own and an inoculated prompt embeds in its
//! detection guidelines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "van")]
    VaN,
    #[serde(rename = "zcot")]
    ZCoT,
    #[serde(rename = "defspec")]
    DeFSpeC,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::VaN, MethodKind::ZCoT, MethodKind::DeFSpeC];

    /// Registry key.
    pub fn key(self) -> &'static str {
        match self {
            MethodKind::VaN => "van",
            MethodKind::ZCoT => "zcot",
            MethodKind::DeFSpeC => "defspec",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MethodKind::VaN => "VaN",
            MethodKind::ZCoT => "Z-CoT",
            MethodKind::DeFSpeC => "DeF-SpeC",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        MethodKind::ALL
            .into_iter()
            .find(|m| m.key() == key)
            .ok_or_else(|| PromptError::UnknownMethod(s.to_string()))
    }
}

pub trait PromptMethod: Send + Sync {
    fn kind(&self) -> MethodKind;

    fn summary(&self) -> &str;

    /// Method-specific instructions, including the answer template.
    fn instruction_block(&self) -> &str;
}

/// A method whose whole contribution is a fixed instruction block.
#[derive(Debug, Clone)]
pub struct InstructionMethod {
    kind: MethodKind,
    summary: &'static str,
    block: String,
}

impl InstructionMethod {
    pub fn new(kind: MethodKind, block: impl Into<String>) -> Self {
        let summary = match kind {
            MethodKind::VaN => "minimal, direct instructions",
            MethodKind::ZCoT => "zero-shot chain-of-thought: step-by-step reasoning before the verdict",
            MethodKind::DeFSpeC => "contextual, deductive and abductive reasoning before the verdict",
        };
        let block: String = block.into();
        Self {
            kind,
            summary,
            block: block.strip_suffix('\n').unwrap_or(&block).to_string(),
        }
    }
}

impl PromptMethod for InstructionMethod {
    fn kind(&self) -> MethodKind {
        self.kind
    }

    fn summary(&self) -> &str {
        self.summary
    }

    fn instruction_block(&self) -> &str {
        &self.block
    }
}

#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<MethodKind, Arc<dyn PromptMethod>>,
}

impl fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.methods.keys()).finish()
    }
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any method already registered for the same kind.
    pub fn register(&mut self, method: Arc<dyn PromptMethod>) {
        self.methods.insert(method.kind(), method);
    }

    pub fn get(&self, kind: MethodKind) -> Result<&dyn PromptMethod, PromptError> {
        self.methods
            .get(&kind)
            .map(|m| m.as_ref())
            .ok_or_else(|| PromptError::UnknownMethod(kind.key().to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&dyn PromptMethod, PromptError> {
        self.get(name.parse()?)
    }

    pub fn kinds(&self) -> impl Iterator<Item = MethodKind> + '_ {
        self.methods.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_parse_leniently() {
        for (s, kind) in [
            ("van", MethodKind::VaN),
            ("VaN", MethodKind::VaN),
            ("z-cot", MethodKind::ZCoT),
            ("Z_CoT", MethodKind::ZCoT),
            ("DeF-SpeC", MethodKind::DeFSpeC),
            ("def_spec", MethodKind::DeFSpeC),
        ] {
            assert_eq!(s.parse::<MethodKind>().unwrap(), kind, "{s}");
        }
        assert!("cot".parse::<MethodKind>().is_err());
    }

    #[test]
    fn registry_lookup() {
        let mut registry = MethodRegistry::new();
        registry.register(Arc::new(InstructionMethod::new(MethodKind::VaN, "Classify.\n")));
        assert_eq!(registry.by_name("van").unwrap().instruction_block(), "Classify.");
        assert!(registry.get(MethodKind::ZCoT).is_err());
    }
}
