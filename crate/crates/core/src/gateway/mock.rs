//! Network-free backend whose replies are a pure function of the request
//! digest and the seed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, GatewayError, ModelSpec, Stage};
use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    AlwaysCredible,
    AlwaysDisinfo,
    /// Answers every intent key found in the prompt with a seeded Yes/No.
    EchoIntentKeys,
    /// Replies looked up by document id and stage in a JSONL script.
    Scripted(PathBuf),
}

impl MockBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            MockBehavior::AlwaysCredible => "always-credible",
            MockBehavior::AlwaysDisinfo => "always-disinfo",
            MockBehavior::EchoIntentKeys => "echo-intent-keys",
            MockBehavior::Scripted(_) => "scripted",
        }
    }
}

/// One script line: `{"doc_id": "...", "stage": "detection", "reply": "..."}`.
/// `doc_id` `*` matches any document; a missing stage matches both stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub reply: String,
}

pub(crate) fn parse_mock_id(id: &str, script: Option<PathBuf>) -> Result<(MockBehavior, u64), GatewayError> {
    let bad = |why: &str| GatewayError::Config(format!("invalid mock model `{id}`: {why}; expected mock:<behavior>:<seed>"));
    let mut parts = id.splitn(3, ':');
    if parts.next() != Some("mock") {
        return Err(bad("missing `mock:` prefix"));
    }
    let behavior = parts.next().ok_or_else(|| bad("missing behavior"))?;
    let seed = match parts.next() {
        Some(s) => s.parse::<u64>().map_err(|_| bad("seed is not an unsigned integer"))?,
        None => 0,
    };
    let behavior = match behavior.to_ascii_lowercase().replace('_', "-").as_str() {
        "always-credible" | "credible" => MockBehavior::AlwaysCredible,
        "always-disinfo" | "always-disinformation" | "disinfo" => MockBehavior::AlwaysDisinfo,
        "echo-intent-keys" | "echo" => MockBehavior::EchoIntentKeys,
        "scripted" => MockBehavior::Scripted(script.ok_or_else(|| bad("scripted behavior needs a script file"))?),
        other => return Err(bad(&format!("unknown behavior `{other}`"))),
    };
    Ok((behavior, seed))
}

pub struct MockBackend {
    behavior: MockBehavior,
    seed: u64,
    script: HashMap<(String, Option<Stage>), String>,
}

impl MockBackend {
    pub fn new(behavior: MockBehavior, seed: u64) -> Result<Self, GatewayError> {
        let script = match &behavior {
            MockBehavior::Scripted(path) => load_script(path)?,
            _ => HashMap::new(),
        };
        Ok(Self { behavior, seed, script })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, GatewayError> {
        let script = spec
            .endpoint
            .strip_prefix("file://")
            .filter(|p| !p.is_empty())
            .map(PathBuf::from);
        let (behavior, seed) = parse_mock_id(&spec.model_id, script)?;
        Self::new(behavior, seed)
    }

    fn coin(&self, digest: &str, salt: &str) -> bool {
        let h = sha256_hex(format!("{}:{digest}:{salt}", self.seed).as_bytes());
        u8::from_str_radix(&h[..2], 16).expect("hex") & 1 == 1
    }

    fn scripted(&self, request: &ChatRequest<'_>, stage: Stage) -> Result<String, BackendError> {
        let doc = request.tag.doc_id.as_deref().unwrap_or("*");
        [
            (doc, Some(stage)),
            (doc, None),
            ("*", Some(stage)),
            ("*", None),
        ]
        .into_iter()
        .find_map(|(d, s)| self.script.get(&(d.to_string(), s)))
        .cloned()
        .ok_or_else(|| BackendError::NoReply(format!("script has no reply for document `{doc}` at stage {stage:?}")))
    }
}

fn load_script(path: &Path) -> Result<HashMap<(String, Option<Stage>), String>, GatewayError> {
    let text = fs::read_to_string(path).map_err(|e| GatewayError::BadScript {
        line: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    let mut script = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| GatewayError::BadScript {
            line: i + 1,
            reason: e.to_string(),
        })?;
        // Later lines override earlier ones for the same key.
        script.insert((entry.doc_id, entry.stage), entry.reply);
    }
    Ok(script)
}

fn intent_key_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""(UCPI|CPV|UIOA|PSSA|PASV)"\s*:"#).expect("valid regex"))
}

/// Intent codes requested by the prompt's answer template, in prompt order.
fn requested_keys(user: &str) -> Vec<&str> {
    let mut keys: Vec<&str> = Vec::new();
    for caps in intent_key_regex().captures_iter(user) {
        let key = caps.get(1).expect("group").as_str();
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let keys = requested_keys(request.user);
        let stage = request.tag.stage.unwrap_or(if keys.is_empty() {
            Stage::Detection
        } else {
            Stage::IntentAnalysis
        });
        if let MockBehavior::Scripted(_) = self.behavior {
            return self.scripted(request, stage);
        }
        if stage == Stage::Detection {
            let disinfo = match self.behavior {
                MockBehavior::AlwaysDisinfo => true,
                MockBehavior::AlwaysCredible => false,
                _ => self.coin(request.digest, "verdict"),
            };
            let label = if disinfo { "Disinformation" } else { "Credible" };
            return Ok(format!("{{\"verdict\": \"{label}\"}}"));
        }
        let with_rationale = request.user.contains("\"rationale\"");
        let fields: Vec<String> = keys
            .iter()
            .map(|key| {
                let yes = match self.behavior {
                    MockBehavior::AlwaysDisinfo => true,
                    MockBehavior::AlwaysCredible => false,
                    _ => self.coin(request.digest, key),
                };
                let answer = if yes { "Yes" } else { "No" };
                if with_rationale {
                    format!("    \"{key}\": {{\"answer\": \"{answer}\", \"rationale\": \"mock {answer} for {key}\"}}")
                } else {
                    format!("    \"{key}\": \"{answer}\"")
                }
            })
            .collect();
        Ok(format!("{{\n{}\n}}", fields.join(",\n")))
    }
}
