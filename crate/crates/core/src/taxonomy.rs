//! The malicious-intent taxonomy and its rendering as a prompt knowledge block.
//!
//! The five intent codes form a closed enumeration. Names and definitions are
//! data: the built-in set is compiled in from `resources/taxonomy.json`, and an
//! override file may replace the wording or select a subset of codes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_TAXONOMY: &str = include_str!("../resources/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown intent code `{0}`")]
    UnknownIntentCode(String),
    #[error("intent code {0} listed more than once")]
    DuplicateCode(IntentCode),
    #[error("intent category {0} has an empty {1}")]
    EmptyField(IntentCode, &'static str),
    #[error("taxonomy has no categories")]
    Empty,
    #[error("cannot read taxonomy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse taxonomy file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One of the five malicious-intent categories.
///
/// Declaration order is the canonical order used in prompts, tables and
/// answer templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntentCode {
    #[serde(rename = "UCPI")]
    Ucpi,
    #[serde(rename = "CPV")]
    Cpv,
    #[serde(rename = "UIOA")]
    Uioa,
    #[serde(rename = "PSSA")]
    Pssa,
    #[serde(rename = "PASV")]
    Pasv,
}

impl IntentCode {
    pub const ALL: [IntentCode; 5] = [
        IntentCode::Ucpi,
        IntentCode::Cpv,
        IntentCode::Uioa,
        IntentCode::Pssa,
        IntentCode::Pasv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentCode::Ucpi => "UCPI",
            IntentCode::Cpv => "CPV",
            IntentCode::Uioa => "UIOA",
            IntentCode::Pssa => "PSSA",
            IntentCode::Pasv => "PASV",
        }
    }
}

impl fmt::Display for IntentCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntentCode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        IntentCode::ALL
            .into_iter()
            .find(|code| code.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| TaxonomyError::UnknownIntentCode(trimmed.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentCategory {
    pub code: IntentCode,
    pub name: String,
    pub definition: String,
}

impl IntentCategory {
    /// The name as it is phrased inside intent-classification prompts:
    /// first letter kept, the rest lower-cased.
    pub fn prompt_name(&self) -> String {
        let mut chars = self.name.chars();
        match chars.next() {
            Some(first) => first.to_string() + &chars.as_str().to_lowercase(),
            None => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentTaxonomy {
    header: String,
    categories: Vec<IntentCategory>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TaxonomyFile {
    Full {
        header: String,
        categories: Vec<IntentCategory>,
    },
    Categories(Vec<IntentCategory>),
}

impl IntentTaxonomy {
    pub fn new(header: impl Into<String>, categories: Vec<IntentCategory>) -> Result<Self, TaxonomyError> {
        if categories.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut seen = Vec::with_capacity(categories.len());
        for category in &categories {
            if seen.contains(&category.code) {
                return Err(TaxonomyError::DuplicateCode(category.code));
            }
            if category.name.trim().is_empty() {
                return Err(TaxonomyError::EmptyField(category.code, "name"));
            }
            if category.definition.trim().is_empty() {
                return Err(TaxonomyError::EmptyField(category.code, "definition"));
            }
            seen.push(category.code);
        }
        Ok(Self {
            header: header.into(),
            categories,
        })
    }

    /// Parses either a bare JSON array of `{code, name, definition}` or an
    /// object carrying a `header` and `categories`. A bare array keeps the
    /// built-in header.
    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        match serde_json::from_str::<TaxonomyFile>(json)? {
            TaxonomyFile::Full { header, categories } => Self::new(header, categories),
            TaxonomyFile::Categories(categories) => Self::new(builtin_taxonomy().header, categories),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn categories(&self) -> &[IntentCategory] {
        &self.categories
    }

    pub fn codes(&self) -> Vec<IntentCode> {
        self.categories.iter().map(|c| c.code).collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn contains(&self, code: IntentCode) -> bool {
        self.categories.iter().any(|c| c.code == code)
    }

    pub fn lookup(&self, code: IntentCode) -> Result<&IntentCategory, TaxonomyError> {
        self.categories
            .iter()
            .find(|c| c.code == code)
            .ok_or_else(|| TaxonomyError::UnknownIntentCode(code.to_string()))
    }
}

/// The five categories compiled into the crate.
pub fn builtin_taxonomy() -> IntentTaxonomy {
    let file: TaxonomyFile =
        serde_json::from_str(BUILTIN_TAXONOMY).expect("built-in taxonomy resource is valid JSON");
    match file {
        TaxonomyFile::Full { header, categories } => {
            IntentTaxonomy::new(header, categories).expect("built-in taxonomy is well formed")
        }
        TaxonomyFile::Categories(_) => unreachable!("built-in taxonomy carries a header"),
    }
}

/// Rendered knowledge block: the general definition followed by one numbered
/// entry per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBlock {
    pub header: String,
    pub entries: Vec<String>,
}

impl KnowledgeBlock {
    pub fn text(&self) -> String {
        let mut out = String::from("MALICIOUS INTENT\n");
        out.push_str(&self.header);
        for entry in &self.entries {
            out.push_str("\n\n");
            out.push_str(entry);
        }
        out
    }
}

impl fmt::Display for KnowledgeBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub fn render_knowledge_block(taxonomy: &IntentTaxonomy) -> KnowledgeBlock {
    let entries = taxonomy
        .categories()
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {} [{}]\n{}", i + 1, c.name, c.code, c.definition))
        .collect();
    KnowledgeBlock {
        header: taxonomy.header().to_string(),
        entries,
    }
}
