use serde_json::{json, Value};

use super::backend::{http_agent, join_url, post_json, resolve_key};
use super::{BackendError, ChatBackend, ChatRequest, GatewayError, ModelSpec};

/// `POST {endpoint}/chat/completions` with bearer auth.
pub struct OpenAiBackend {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
}

impl OpenAiBackend {
    pub fn new(spec: &ModelSpec) -> Result<Self, GatewayError> {
        spec.validate()?;
        Ok(Self {
            agent: http_agent(),
            url: join_url(&spec.endpoint, "chat/completions"),
            key: resolve_key(spec)?,
        })
    }
}

pub(crate) fn request_body(request: &ChatRequest<'_>) -> Value {
    let mut body = json!({
        "model": request.spec.model_id,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
        "temperature": request.opts.temperature,
    });
    if let Some(max) = request.opts.max_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

pub(crate) fn extract_reply(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
}

impl ChatBackend for OpenAiBackend {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let headers: Vec<(&str, String)> = self
            .key
            .iter()
            .map(|k| ("Authorization", format!("Bearer {k}")))
            .collect();
        let body = post_json(&self.agent, &self.url, &headers, &request_body(request), request.opts.timeout())?;
        extract_reply(&body)
    }
}
