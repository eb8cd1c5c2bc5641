use serde_json::{json, Value};

use super::backend::{http_agent, join_url, post_json, resolve_key};
use super::{BackendError, ChatBackend, ChatRequest, GatewayError, ModelSpec};

/// `POST {endpoint}/models/{model}:generateContent` with an API-key header.
pub struct GoogleBackend {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
}

impl GoogleBackend {
    pub fn new(spec: &ModelSpec) -> Result<Self, GatewayError> {
        spec.validate()?;
        Ok(Self {
            agent: http_agent(),
            url: join_url(&spec.endpoint, &format!("models/{}:generateContent", spec.model_id)),
            key: resolve_key(spec)?,
        })
    }
}

fn request_body(request: &ChatRequest<'_>) -> Value {
    let mut generation = json!({ "temperature": request.opts.temperature });
    if let Some(max) = request.opts.max_tokens {
        generation["maxOutputTokens"] = json!(max);
    }
    json!({
        "systemInstruction": {"parts": [{"text": request.system}]},
        "contents": [{"role": "user", "parts": [{"text": request.user}]}],
        "generationConfig": generation,
    })
}

fn extract_reply(body: &Value) -> Result<String, BackendError> {
    let parts = body
        .pointer("/candidates/0/content/parts")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Malformed("missing candidates[0].content.parts".into()))?;
    Ok(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect())
}

impl ChatBackend for GoogleBackend {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let headers: Vec<(&str, String)> = self.key.iter().map(|k| ("x-goog-api-key", k.clone())).collect();
        let body = post_json(&self.agent, &self.url, &headers, &request_body(request), request.opts.timeout())?;
        extract_reply(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::backend::testserver::serve;
    use crate::gateway::{Gateway, GatewayConfig, Provider, RequestOptions, RequestTag};
    use crate::promptkit::{MethodKind, PromptKit};

    #[test]
    fn sends_generate_content_and_joins_parts() {
        let reply = r#"{"candidates":[{"content":{"parts":[{"text":"{\"verdict\": "},{"text":"\"Disinformation\"}"}]}}]}"#;
        let (base, rx) = serve(vec![(200, reply.into())]);
        let spec = ModelSpec {
            provider: Provider::GoogleCompatible,
            model_id: "gemini-test".into(),
            cutoff: None,
            endpoint: base,
            auth_env: String::new(),
        };
        let gateway = Gateway::new(GatewayConfig::replication());
        let prompt = PromptKit::builtin().baseline(MethodKind::ZCoT, "text").unwrap();
        let ex = gateway
            .complete(&prompt, &spec, &RequestOptions::default(), &RequestTag::default())
            .unwrap();
        assert_eq!(ex.reply, r#"{"verdict": "Disinformation"}"#);
        let captured = rx.recv().unwrap();
        assert!(captured.request_line.starts_with("POST /models/gemini-test:generateContent"));
        let body: Value = serde_json::from_str(&captured.body).unwrap();
        assert_eq!(body["generationConfig"]["temperature"], 0.0);
        assert_eq!(body["systemInstruction"]["parts"][0]["text"], prompt.system);
    }
}
