//! Verdict extraction from free-form model replies.
//!
//! Both parsers are total: any input string yields a value plus a
//! [`ParseOutcome`]. Extraction walks a ladder of rules:
//!
//! 1. a JSON object anywhere in the reply (bare, code-fenced, or surrounded by
//!    prose), with a lenient second attempt that drops trailing commas and
//!    swaps single quotes;
//! 2. per-key text patterns such as `"UCPI": "Yes"`, `[UCPI]: Yes` or
//!    `"verdict": Credible`;
//! 3. for detection replies only, a bare label word or an unambiguous label
//!    word in prose.
//!
//! Intent keys still missing after the ladder default to `No`. A detection
//! reply that cannot be resolved defaults to `Credible`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::taxonomy::{IntentCode, IntentTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "Yes",
            Verdict::No => "No",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentJudgement {
    pub verdict: Verdict,
    #[serde(default)]
    pub rationale: String,
}

/// Per-intent verdicts with rationales.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentAnalysis {
    verdicts: BTreeMap<IntentCode, IntentJudgement>,
}

impl IntentAnalysis {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every code answered `No` with no rationale.
    pub fn all_no(codes: &[IntentCode]) -> Self {
        let mut analysis = Self::new();
        for &code in codes {
            analysis.insert(code, Verdict::No, "");
        }
        analysis
    }

    pub fn insert(&mut self, code: IntentCode, verdict: Verdict, rationale: impl Into<String>) {
        self.verdicts.insert(
            code,
            IntentJudgement {
                verdict,
                rationale: rationale.into(),
            },
        );
    }

    pub fn get(&self, code: IntentCode) -> Option<&IntentJudgement> {
        self.verdicts.get(&code)
    }

    pub fn verdict(&self, code: IntentCode) -> Option<Verdict> {
        self.get(code).map(|j| j.verdict)
    }

    pub fn iter(&self) -> impl Iterator<Item = (IntentCode, &IntentJudgement)> {
        self.verdicts.iter().map(|(code, j)| (*code, j))
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    /// Codes answered `Yes`.
    pub fn positives(&self) -> Vec<IntentCode> {
        self.iter().filter(|(_, j)| j.verdict.is_yes()).map(|(c, _)| c).collect()
    }

    pub fn missing(&self, codes: &[IntentCode]) -> Vec<IntentCode> {
        codes.iter().copied().filter(|c| !self.verdicts.contains_key(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectionLabel {
    Disinformation,
    Credible,
}

impl DetectionLabel {
    pub fn is_positive(self) -> bool {
        self == DetectionLabel::Disinformation
    }
}

impl fmt::Display for DetectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionLabel::Disinformation => "Disinformation",
            DetectionLabel::Credible => "Credible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub label: DetectionLabel,
    /// The token the label was read from; empty when parsing failed.
    pub raw_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseStatus {
    Parsed,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    pub detail: String,
}

impl ParseOutcome {
    fn new(status: ParseStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("analysis is missing intent codes: {}", .0.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "))]
pub struct IncompleteAnalysis(pub Vec<IntentCode>);

// ---------------------------------------------------------------------------
// JSON candidates

/// A JSON object found in a reply; `lenient` marks objects that only parsed
/// after repair.
struct Candidate {
    object: Map<String, Value>,
    lenient: bool,
}

/// Byte ranges of balanced `{...}` spans, honouring string literals.
fn brace_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut in_string: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(quote) = in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == quote {
                in_string = None;
            }
            continue;
        }
        match b {
            b'"' => in_string = Some(b),
            b'{' => stack.push(i),
            b'}' => {
                if let Some(start) = stack.pop() {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

fn strip_trailing_commas(text: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r",\s*([}\]])").expect("valid regex"));
    re.replace_all(text, "$1").into_owned()
}

fn lenient_parse(text: &str) -> Option<Map<String, Value>> {
    let mut repaired = strip_trailing_commas(text);
    if !repaired.contains('"') {
        repaired = repaired.replace('\'', "\"");
    }
    match serde_json::from_str::<Value>(&repaired) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// All JSON objects in the reply, outermost spans first, in reply order.
fn json_candidates(reply: &str) -> Vec<Candidate> {
    if let Ok(Value::Object(object)) = serde_json::from_str::<Value>(reply.trim()) {
        return vec![Candidate {
            object,
            lenient: false,
        }];
    }
    let mut spans = brace_spans(reply);
    spans.sort_by_key(|&(start, end)| (start, std::cmp::Reverse(end)));
    let mut out = Vec::new();
    let mut covered_until = 0;
    for (start, end) in spans {
        if start < covered_until {
            continue;
        }
        let slice = &reply[start..end];
        if let Ok(Value::Object(object)) = serde_json::from_str::<Value>(slice) {
            out.push(Candidate {
                object,
                lenient: false,
            });
            covered_until = end;
        } else if let Some(object) = lenient_parse(slice) {
            out.push(Candidate { object, lenient: true });
            covered_until = end;
        }
    }
    out
}

fn get_ci<'a>(object: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    object.get(key).or_else(|| {
        object
            .iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Reads a Yes/No answer from a free-form value. Template echoes such as
/// "Yes or No" are rejected. Returns the verdict and any trailing text.
fn yes_no(text: &str) -> Option<(Verdict, String)> {
    let lowered = text.to_lowercase();
    if lowered.contains("yes or no") || lowered.contains("no or yes") {
        return None;
    }
    let trimmed = text.trim_start_matches(|c: char| !c.is_alphanumeric());
    let first_len = trimmed
        .find(|c: char| !c.is_alphanumeric())
        .unwrap_or(trimmed.len());
    let verdict = match trimmed[..first_len].to_lowercase().as_str() {
        "yes" | "true" | "y" => Verdict::Yes,
        "no" | "false" | "n" => Verdict::No,
        _ => return None,
    };
    let rest = trimmed[first_len..]
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '-' | '—' | '–'))
        .trim_end()
        .to_string();
    Some((verdict, rest))
}

const ANSWER_KEYS: [&str; 5] = ["answer", "verdict", "label", "decision", "value"];
const RATIONALE_KEYS: [&str; 5] = ["rationale", "reason", "reasoning", "explanation", "justification"];

fn judgement_from_value(value: &Value) -> Option<IntentJudgement> {
    match value {
        Value::Bool(b) => Some(IntentJudgement {
            verdict: if *b { Verdict::Yes } else { Verdict::No },
            rationale: String::new(),
        }),
        Value::String(s) => yes_no(s).map(|(verdict, rationale)| IntentJudgement { verdict, rationale }),
        Value::Object(inner) => {
            let answer = ANSWER_KEYS.iter().find_map(|k| get_ci(inner, k))?;
            let mut judgement = judgement_from_value(answer)?;
            if let Some(Value::String(r)) = RATIONALE_KEYS.iter().find_map(|k| get_ci(inner, k)) {
                judgement.rationale = r.trim().to_string();
            }
            Some(judgement)
        }
        Value::Array(items) if items.len() == 2 => {
            let mut judgement = judgement_from_value(&items[0])?;
            if let Value::String(r) = &items[1] {
                judgement.rationale = r.trim().to_string();
            }
            Some(judgement)
        }
        _ => None,
    }
}

fn code_pattern(code: IntentCode) -> &'static Regex {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    let patterns = PATTERNS.get_or_init(|| {
        IntentCode::ALL
            .iter()
            .map(|c| {
                // `"UCPI": "Yes`, `UCPI: no`, `[UCPI]: Yes — ...`, `**UCPI**: No`, `"UCPI": {"answer": "Yes"`
                Regex::new(&format!(
                    r#"(?i)["'\[*]*\b{code}\b["'\]*]*\s*[:=]\s*(?:\{{[^{{}}]*?["']?(?:answer|verdict|label|decision|value)["']?\s*:\s*)?["'*]*\s*(yes|no|true|false)\b([^\n]*)"#,
                    code = c.as_str()
                ))
                .expect("valid regex")
            })
            .collect()
    });
    &patterns[IntentCode::ALL.iter().position(|c| *c == code).expect("known code")]
}

fn rationale_from_tail(tail: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"(?i)["']?(?:rationale|reason|reasoning|explanation|justification)["']?\s*:\s*"((?:[^"\\]|\\.)*)"#)
            .expect("valid regex")
    });
    if let Some(caps) = re.captures(tail) {
        return caps[1].replace("\\\"", "\"").trim().to_string();
    }
    let trimmed = tail.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '*' | '.' | ','));
    // JSON-ish tails carry no prose rationale.
    if trimmed.starts_with(['}', '"', '{']) || trimmed.is_empty() {
        return String::new();
    }
    trimmed
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '—' | '–' | ':' | ';'))
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '"'))
        .to_string()
}

/// Extracts per-intent verdicts for `expected` codes.
pub fn parse_intent_reply(reply: &str, expected: &[IntentCode]) -> (IntentAnalysis, ParseOutcome) {
    let mut analysis = IntentAnalysis::new();
    let mut lenient = false;

    // Rung 1: the JSON object answering the most expected codes, later
    // objects winning ties.
    let mut best: Option<(usize, IntentAnalysis, bool)> = None;
    for candidate in json_candidates(reply) {
        let mut found = IntentAnalysis::new();
        for &code in expected {
            if let Some(judgement) = get_ci(&candidate.object, code.as_str()).and_then(judgement_from_value) {
                found.verdicts.insert(code, judgement);
            }
        }
        if !found.is_empty() && best.as_ref().is_none_or(|(n, _, _)| found.len() >= *n) {
            best = Some((found.len(), found, candidate.lenient));
        }
    }
    if let Some((_, found, was_lenient)) = best {
        analysis = found;
        lenient = was_lenient;
    }
    let from_json = analysis.len();

    // Rung 2: per-key patterns for whatever is still missing.
    let mut from_pattern = 0;
    for code in analysis.missing(expected) {
        if let Some(caps) = code_pattern(code).captures_iter(reply).last() {
            let verdict = match caps[1].to_lowercase().as_str() {
                "yes" | "true" => Verdict::Yes,
                _ => Verdict::No,
            };
            analysis.insert(code, verdict, rationale_from_tail(&caps[2]));
            from_pattern += 1;
        }
    }

    let missing = analysis.missing(expected);
    for &code in &missing {
        analysis.insert(code, Verdict::No, "");
    }

    let outcome = if from_json + from_pattern == 0 {
        ParseOutcome::new(ParseStatus::Failed, "no intent verdicts found; all intents set to No")
    } else if from_json == expected.len() && !lenient {
        ParseOutcome::new(ParseStatus::Parsed, "json object")
    } else {
        let mut notes = Vec::new();
        if lenient {
            notes.push("json repaired (trailing commas or quotes)".to_string());
        }
        if from_pattern > 0 {
            notes.push(format!("{from_pattern} verdict(s) read by key pattern"));
        }
        if !missing.is_empty() {
            notes.push(format!(
                "missing {} defaulted to No",
                missing.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(",")
            ));
        }
        ParseOutcome::new(ParseStatus::Repaired, notes.join("; "))
    };
    (analysis, outcome)
}

// ---------------------------------------------------------------------------
// Detection verdicts

fn label_of_word(word: &str) -> Option<DetectionLabel> {
    match word {
        "disinformation" | "fake" | "yes" => Some(DetectionLabel::Disinformation),
        "credible" | "real" | "no" => Some(DetectionLabel::Credible),
        _ => None,
    }
}

/// Label named by a slot value, provided only one label is named.
fn label_of_value(text: &str) -> Option<(DetectionLabel, String)> {
    let mut found: Option<(DetectionLabel, String)> = None;
    for word in words(text) {
        if let Some(label) = label_of_word(&word) {
            match &found {
                Some((seen, _)) if *seen != label => return None,
                Some(_) => {}
                None => found = Some((label, word)),
            }
        }
    }
    found
}

const VERDICT_KEYS: [&str; 7] = [
    "verdict",
    "answer",
    "label",
    "classification",
    "prediction",
    "final_answer",
    "result",
];

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?i)["'*]*\b(?:verdict|final answer|answer|label|classification|prediction|conclusion)\b["'*]*\s*[:=]\s*["'*]*\s*([A-Za-z][A-Za-z -]*)"#,
        )
        .expect("valid regex")
    })
}

/// Extracts the disinformation verdict from a detection reply.
pub fn parse_detection_reply(reply: &str) -> (DetectionVerdict, ParseOutcome) {
    let verdict = |label, raw_token: String| DetectionVerdict { label, raw_token };

    // Rung 1: JSON answer slot; the last object with a resolvable slot wins.
    for candidate in json_candidates(reply).into_iter().rev() {
        let slot = VERDICT_KEYS.iter().find_map(|k| get_ci(&candidate.object, k));
        let resolved = match slot {
            Some(Value::String(s)) => label_of_value(s),
            Some(Value::Bool(b)) => Some((
                if *b {
                    DetectionLabel::Disinformation
                } else {
                    DetectionLabel::Credible
                },
                b.to_string(),
            )),
            _ => None,
        };
        if let Some((label, token)) = resolved {
            let outcome = if candidate.lenient {
                ParseOutcome::new(ParseStatus::Repaired, "json repaired (trailing commas or quotes)")
            } else {
                ParseOutcome::new(ParseStatus::Parsed, "json answer slot")
            };
            return (verdict(label, token), outcome);
        }
    }

    // Rung 2: textual answer slot, last occurrence.
    for caps in slot_pattern().captures_iter(reply).collect::<Vec<_>>().into_iter().rev() {
        if let Some((label, token)) = label_of_value(&caps[1]) {
            return (
                verdict(label, token),
                ParseOutcome::new(ParseStatus::Parsed, "answer slot pattern"),
            );
        }
    }

    // A reply cut off inside its answer slot, e.g. `{"verdict": "Disinf`.
    let end = reply.trim_end().len();
    if let Some(caps) = slot_pattern().captures_iter(reply).last() {
        let value = caps.get(1).expect("group");
        let token = value.as_str().trim().to_lowercase();
        if value.end() == end && token.len() >= 4 && !token.contains(' ') {
            let label = if "disinformation".starts_with(&token) {
                Some(DetectionLabel::Disinformation)
            } else if "credible".starts_with(&token) {
                Some(DetectionLabel::Credible)
            } else {
                None
            };
            if let Some(label) = label {
                return (
                    verdict(label, token),
                    ParseOutcome::new(ParseStatus::Repaired, "truncated answer slot"),
                );
            }
        }
    }

    // Rung 3: the whole reply is a single label word.
    let bare: Vec<String> = words(reply).collect();
    if bare.len() == 1 {
        if let Some(label) = label_of_word(&bare[0]) {
            return (
                verdict(label, bare[0].clone()),
                ParseOutcome::new(ParseStatus::Parsed, "bare label"),
            );
        }
    }

    // Rung 4: prose naming exactly one class. Yes/no are too common in prose
    // to count here.
    let mut disinfo = None;
    let mut credible = None;
    for word in &bare {
        match word.as_str() {
            "disinformation" | "disinformative" | "fake" => disinfo = disinfo.or(Some(word.clone())),
            "credible" | "real" => credible = credible.or(Some(word.clone())),
            _ => {}
        }
    }
    match (disinfo, credible) {
        (Some(token), None) => (
            verdict(DetectionLabel::Disinformation, token),
            ParseOutcome::new(ParseStatus::Repaired, "label word in prose"),
        ),
        (None, Some(token)) => (
            verdict(DetectionLabel::Credible, token),
            ParseOutcome::new(ParseStatus::Repaired, "label word in prose"),
        ),
        (Some(_), Some(_)) => (
            verdict(DetectionLabel::Credible, String::new()),
            ParseOutcome::new(ParseStatus::Failed, "both labels present; defaulted to Credible"),
        ),
        (None, None) => (
            verdict(DetectionLabel::Credible, String::new()),
            ParseOutcome::new(ParseStatus::Failed, "no label found; defaulted to Credible"),
        ),
    }
}

// ---------------------------------------------------------------------------
// Rendering

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One line per taxonomy category, `<name> [<code>]: <Yes|No> — <rationale>`,
/// in taxonomy order. Empty rationales drop the dash suffix.
pub fn render_analysis(analysis: &IntentAnalysis, taxonomy: &IntentTaxonomy) -> Result<String, IncompleteAnalysis> {
    let missing = analysis.missing(&taxonomy.codes());
    if !missing.is_empty() {
        return Err(IncompleteAnalysis(missing));
    }
    let lines: Vec<String> = taxonomy
        .categories()
        .iter()
        .map(|category| {
            let judgement = analysis.get(category.code).expect("checked complete");
            let rationale = one_line(&judgement.rationale);
            if rationale.is_empty() {
                format!("{} [{}]: {}", category.name, category.code, judgement.verdict)
            } else {
                format!("{} [{}]: {} — {}", category.name, category.code, judgement.verdict, rationale)
            }
        })
        .collect();
    Ok(lines.join("\n"))
}

/// The analysis as a reply conforming to the intent-analysis answer template.
pub fn render_analysis_reply(analysis: &IntentAnalysis) -> String {
    let mut object = Map::new();
    for (code, judgement) in analysis.iter() {
        object.insert(
            code.to_string(),
            serde_json::json!({
                "answer": judgement.verdict.to_string(),
                "rationale": judgement.rationale,
            }),
        );
    }
    serde_json::to_string_pretty(&Value::Object(object)).expect("serializable")
}
