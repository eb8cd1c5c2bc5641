use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::{GatewayError, GoogleBackend, MockBackend, ModelSpec, OpenAiBackend, Provider, RequestOptions, RequestTag};

/// One outgoing chat request.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub spec: &'a ModelSpec,
    pub opts: &'a RequestOptions,
    pub system: &'a str,
    pub user: &'a str,
    pub digest: &'a str,
    pub tag: &'a RequestTag,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("script line {line}: {reason}")]
    BadScript { line: usize, reason: String },
    #[error("{0}")]
    NoReply(String),
}

impl BackendError {
    /// Worth another attempt: rate limiting, server errors, timeouts and
    /// connection problems.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Timeout | BackendError::Transport(_) => true,
            _ => false,
        }
    }

    pub(crate) fn into_gateway_error(self, spec: &ModelSpec, attempts: u32) -> GatewayError {
        match self {
            BackendError::Status { status: 429, .. } => GatewayError::RateLimited { attempts },
            BackendError::Status { status, body } => GatewayError::ProviderError { status, body },
            BackendError::Timeout => GatewayError::Timeout { attempts },
            BackendError::Transport(msg) => GatewayError::Transport(format!("{}: {msg}", spec.endpoint)),
            BackendError::Malformed(msg) => GatewayError::Malformed(msg),
            BackendError::BadScript { line, reason } => GatewayError::BadScript { line, reason },
            BackendError::NoReply(msg) => GatewayError::Malformed(msg),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

pub type BackendFactory = Arc<dyn Fn(&ModelSpec) -> Result<Arc<dyn ChatBackend>, GatewayError> + Send + Sync>;

/// Backend constructors keyed by provider.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    factories: HashMap<Provider, BackendFactory>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut registry = Self::new();
        registry.register(Provider::OpenaiCompatible, |spec: &ModelSpec| {
            Ok(Arc::new(OpenAiBackend::new(spec)?) as Arc<dyn ChatBackend>)
        });
        registry.register(Provider::GoogleCompatible, |spec: &ModelSpec| {
            Ok(Arc::new(GoogleBackend::new(spec)?) as Arc<dyn ChatBackend>)
        });
        registry.register(Provider::Mock, |spec: &ModelSpec| {
            Ok(Arc::new(MockBackend::from_spec(spec)?) as Arc<dyn ChatBackend>)
        });
        registry
    }

    pub fn register<F>(&mut self, provider: Provider, factory: F)
    where
        F: Fn(&ModelSpec) -> Result<Arc<dyn ChatBackend>, GatewayError> + Send + Sync + 'static,
    {
        self.factories.insert(provider, Arc::new(factory));
    }

    pub fn create(&self, spec: &ModelSpec) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        let factory = self
            .factories
            .get(&spec.provider)
            .ok_or(GatewayError::UnknownProvider(spec.provider))?;
        factory(spec)
    }
}

pub(crate) fn resolve_key(spec: &ModelSpec) -> Result<Option<String>, GatewayError> {
    if spec.auth_env.is_empty() {
        return Ok(None);
    }
    match std::env::var(&spec.auth_env) {
        Ok(key) if !key.trim().is_empty() => Ok(Some(key)),
        _ => Err(GatewayError::AuthMissing(spec.auth_env.clone())),
    }
}

pub(crate) fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .new_agent()
}

/// POSTs `body` and returns the decoded JSON reply of a 2xx response.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    headers: &[(&str, String)],
    body: &Value,
    timeout: Duration,
) -> Result<Value, BackendError> {
    let mut request = agent.post(url);
    for (name, value) in headers {
        request = request.header(*name, value.as_str());
    }
    let mut response = request
        .config()
        .timeout_global(Some(timeout))
        .build()
        .send_json(body)
        .map_err(map_ureq_error)?;
    let status = response.status().as_u16();
    let text = response.body_mut().read_to_string().map_err(map_ureq_error)?;
    if !(200..300).contains(&status) {
        return Err(BackendError::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("invalid JSON body: {e}")))
}

fn map_ureq_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(status) => BackendError::Status {
            status,
            body: String::new(),
        },
        other => BackendError::Transport(other.to_string()),
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
