//! Provider-agnostic chat completion with retries, rate limiting and a
//! content-addressed disk cache.
//!
//! Backends are registered per provider in a [`BackendRegistry`]; the
//! gateway resolves one backend per model on first use. Replies are cached on
//! the digest of everything that can influence them (model, sampling
//! options, both messages), so a temperature-0 rerun never hits the network.

mod backend;
mod cache;
mod google;
mod mock;
mod openai;
mod ratelimit;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::YearMonth;
use crate::digest::sha256_hex;
use crate::promptkit::RenderedPrompt;

pub use backend::{BackendError, BackendFactory, BackendRegistry, ChatBackend, ChatRequest};
pub use cache::{CachedReply, DiskCache};
pub use google::GoogleBackend;
pub use mock::{MockBackend, MockBehavior, ScriptEntry};
pub use openai::OpenAiBackend;
pub use ratelimit::TokenBucket;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("API key missing: environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no backend registered for provider {0}")]
    UnknownProvider(Provider),
    #[error("mock script line {line}: {reason}")]
    BadScript { line: usize, reason: String },
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    #[serde(alias = "openai")]
    OpenaiCompatible,
    #[serde(alias = "google", alias = "gemini")]
    GoogleCompatible,
    Mock,
}

impl Provider {
    pub fn as_str(self) -> &'static str {
        match self {
            Provider::OpenaiCompatible => "openai-compatible",
            Provider::GoogleCompatible => "google-compatible",
            Provider::Mock => "mock",
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provider {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "openai-compatible" | "openai" => Ok(Provider::OpenaiCompatible),
            "google-compatible" | "google" | "gemini" => Ok(Provider::GoogleCompatible),
            "mock" => Ok(Provider::Mock),
            other => Err(GatewayError::Config(format!("unknown provider `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider: Provider,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<YearMonth>,
    #[serde(default)]
    pub endpoint: String,
    /// Name of the environment variable holding the API key; empty for
    /// unauthenticated endpoints.
    #[serde(default)]
    pub auth_env: String,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model_id is empty".into()));
        }
        if self.provider != Provider::Mock && self.endpoint.trim().is_empty() {
            return Err(GatewayError::Config(format!("model `{}` has no endpoint", self.model_id)));
        }
        Ok(())
    }

    /// `mock:<behavior>:<seed>`, e.g. `mock:always-disinfo:7`. A scripted mock
    /// reads its replies from `script`.
    pub fn mock(behavior: &MockBehavior, seed: u64) -> Self {
        let endpoint = match behavior {
            MockBehavior::Scripted(path) => format!("file://{}", path.display()),
            _ => String::new(),
        };
        Self {
            provider: Provider::Mock,
            model_id: format!("mock:{}:{seed}", behavior.name()),
            cutoff: None,
            endpoint,
            auth_env: String::new(),
        }
    }

    /// Parses `mock:<behavior>:<seed>`; `script` is required for the scripted
    /// behavior.
    pub fn parse_mock(id: &str, script: Option<PathBuf>) -> Result<Self, GatewayError> {
        let (behavior, seed) = mock::parse_mock_id(id, script)?;
        Ok(Self::mock(&behavior, seed))
    }

    /// Models compared in the original experiments, keyed by short alias.
    pub fn catalog() -> Vec<(&'static str, ModelSpec)> {
        let openai = |id: &str, cutoff: (i32, u32)| ModelSpec {
            provider: Provider::OpenaiCompatible,
            model_id: id.into(),
            cutoff: YearMonth::new(cutoff.0, cutoff.1),
            endpoint: "https://api.openai.com/v1".into(),
            auth_env: "OPENAI_API_KEY".into(),
        };
        let deepinfra = |id: &str, cutoff: (i32, u32)| ModelSpec {
            provider: Provider::OpenaiCompatible,
            model_id: id.into(),
            cutoff: YearMonth::new(cutoff.0, cutoff.1),
            endpoint: "https://api.deepinfra.com/v1/openai".into(),
            auth_env: "DEEPINFRA_API_KEY".into(),
        };
        vec![
            ("gpt-4o-mini", openai("gpt-4o-mini", (2023, 10))),
            ("gpt-4.1-mini", openai("gpt-4.1-mini-2025-04-14", (2024, 6))),
            (
                "gemini-2.0-flash",
                ModelSpec {
                    provider: Provider::GoogleCompatible,
                    model_id: "gemini-2.0-flash".into(),
                    cutoff: YearMonth::new(2024, 6),
                    endpoint: "https://generativelanguage.googleapis.com/v1beta".into(),
                    auth_env: "GEMINI_API_KEY".into(),
                },
            ),
            ("llama-3.3-70b", deepinfra("meta-llama/Llama-3.3-70B-Instruct", (2023, 12))),
            ("gemma-3-27b", deepinfra("google/gemma-3-27b-it", (2024, 8))),
        ]
    }

    pub fn from_catalog(alias: &str) -> Option<ModelSpec> {
        Self::catalog()
            .into_iter()
            .find(|(a, spec)| *a == alias || spec.model_id == alias)
            .map(|(_, spec)| spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestOptions {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RequestOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: Some(4096),
            timeout_ms: 120_000,
            max_retries: 3,
            backoff_base_ms: 1_000,
            backoff_max_ms: 30_000,
        }
    }
}

impl RequestOptions {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Delay before retry `k` (0-based): `base * 2^k`, capped at the maximum.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(40)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// Which pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    IntentAnalysis,
    Detection,
}

/// Request metadata that does not reach the provider and is not part of the
/// cache key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestTag {
    pub doc_id: Option<String>,
    pub stage: Option<Stage>,
}

impl RequestTag {
    pub fn new(doc_id: impl Into<String>, stage: Stage) -> Self {
        Self {
            doc_id: Some(doc_id.into()),
            stage: Some(stage),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt_digest: String,
    pub reply: String,
    pub latency: Duration,
    pub attempt_count: u32,
    pub from_cache: bool,
}

/// Stable digest of the request content that can influence the reply.
pub fn prompt_digest(spec: &ModelSpec, opts: &RequestOptions, prompt: &RenderedPrompt) -> String {
    let canonical = serde_json::json!({
        "provider": spec.provider.as_str(),
        "model_id": spec.model_id,
        "endpoint": spec.endpoint,
        "temperature": opts.temperature,
        "max_tokens": opts.max_tokens,
        "system": prompt.system,
        "user": prompt.user,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

#[derive(Debug, Clone, Default)]
pub struct GatewayConfig {
    /// Rejects any nonzero temperature.
    pub replication: bool,
    pub cache_dir: Option<PathBuf>,
    /// Ignore cached replies (fresh replies are still written back).
    pub refresh: bool,
    /// Requests per minute per provider; absent means unlimited.
    pub requests_per_minute: HashMap<Provider, u32>,
}

impl GatewayConfig {
    pub fn replication() -> Self {
        Self {
            replication: true,
            ..Self::default()
        }
    }
}

/// Provider, model id and endpoint.
type BackendKey = (Provider, String, String);

pub struct Gateway {
    config: GatewayConfig,
    registry: BackendRegistry,
    backends: RwLock<HashMap<BackendKey, Arc<dyn ChatBackend>>>,
    limiters: HashMap<Provider, TokenBucket>,
    cache: Option<DiskCache>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        Self::with_registry(config, BackendRegistry::builtin())
    }

    pub fn with_registry(config: GatewayConfig, registry: BackendRegistry) -> Self {
        let limiters = config
            .requests_per_minute
            .iter()
            .map(|(provider, rpm)| (*provider, TokenBucket::per_minute(*rpm)))
            .collect();
        let cache = config.cache_dir.clone().map(DiskCache::new);
        Self {
            config,
            registry,
            backends: RwLock::new(HashMap::new()),
            limiters,
            cache,
        }
    }

    /// Network-free gateway without cache.
    pub fn offline() -> Self {
        Self::new(GatewayConfig::replication())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn backend(&self, spec: &ModelSpec) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        let key = (spec.provider, spec.model_id.clone(), spec.endpoint.clone());
        if let Some(backend) = self.backends.read().expect("backend map lock").get(&key) {
            return Ok(backend.clone());
        }
        let created = self.registry.create(spec)?;
        let mut map = self.backends.write().expect("backend map lock");
        Ok(map.entry(key).or_insert(created).clone())
    }

    pub fn validate(&self, spec: &ModelSpec, opts: &RequestOptions) -> Result<(), GatewayError> {
        spec.validate()?;
        if self.config.replication && opts.temperature != 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be 0 for replication runs, got {}",
                opts.temperature
            )));
        }
        Ok(())
    }

    /// Sends `prompt`, consulting the cache first and retrying transient
    /// failures with exponential backoff.
    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        spec: &ModelSpec,
        opts: &RequestOptions,
        tag: &RequestTag,
    ) -> Result<ChatExchange, GatewayError> {
        self.validate(spec, opts)?;
        let digest = prompt_digest(spec, opts, prompt);
        let started = Instant::now();

        if let (Some(cache), false) = (&self.cache, self.config.refresh) {
            if let Some(hit) = cache.get(spec.provider, &digest)? {
                return Ok(ChatExchange {
                    prompt_digest: digest,
                    reply: hit.reply,
                    latency: started.elapsed(),
                    attempt_count: 0,
                    from_cache: true,
                });
            }
        }

        let backend = self.backend(spec)?;
        let request = ChatRequest {
            spec,
            opts,
            system: &prompt.system,
            user: &prompt.user,
            digest: &digest,
            tag,
        };
        let mut attempts = 0;
        let reply = loop {
            if let Some(limiter) = self.limiters.get(&spec.provider) {
                limiter.acquire();
            }
            attempts += 1;
            match backend.send(&request) {
                Ok(reply) => break reply,
                Err(err) if err.is_transient() && attempts <= opts.max_retries => {
                    let delay = opts.backoff(attempts - 1);
                    tracing::warn!(model = %spec.model_id, attempt = attempts, ?delay, error = %err, "retrying");
                    std::thread::sleep(delay);
                }
                Err(err) => return Err(err.into_gateway_error(spec, attempts)),
            }
        };

        if let Some(cache) = &self.cache {
            cache.put(
                spec.provider,
                &CachedReply {
                    digest: digest.clone(),
                    model_id: spec.model_id.clone(),
                    reply: reply.clone(),
                },
            )?;
        }
        Ok(ChatExchange {
            prompt_digest: digest,
            reply,
            latency: started.elapsed(),
            attempt_count: attempts,
            from_cache: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;
    use crate::promptkit::PromptKit;

    fn prompt(text: &str) -> RenderedPrompt {
        PromptKit::builtin().baseline(crate::promptkit::MethodKind::VaN, text).unwrap()
    }

    fn fast_opts(max_retries: u32) -> RequestOptions {
        RequestOptions {
            max_retries,
            backoff_base_ms: 0,
            ..RequestOptions::default()
        }
    }

    /// Fails with the given error `failures` times, then answers.
    struct Flaky {
        failures: u32,
        status: u16,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn send(&self, _: &ChatRequest<'_>) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Status {
                    status: self.status,
                    body: "busy".into(),
                })
            } else {
                Ok(r#"{"verdict": "Credible"}"#.into())
            }
        }
    }

    fn flaky_gateway(failures: u32, status: u16) -> (Gateway, Arc<Flaky>) {
        let flaky = Arc::new(Flaky {
            failures,
            status,
            calls: AtomicU32::new(0),
        });
        let mut registry = BackendRegistry::new();
        let shared = flaky.clone();
        registry.register(Provider::Mock, move |_: &ModelSpec| Ok(shared.clone() as Arc<dyn ChatBackend>));
        (Gateway::with_registry(GatewayConfig::replication(), registry), flaky)
    }

    fn mock_spec() -> ModelSpec {
        ModelSpec::mock(&MockBehavior::AlwaysCredible, 1)
    }

    #[test]
    fn second_identical_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let gateway = Gateway::new(GatewayConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..GatewayConfig::replication()
        });
        let spec = ModelSpec::mock(&MockBehavior::EchoIntentKeys, 3);
        let p = prompt("hello");
        let first = gateway.complete(&p, &spec, &RequestOptions::default(), &RequestTag::default()).unwrap();
        let second = gateway.complete(&p, &spec, &RequestOptions::default(), &RequestTag::default()).unwrap();
        assert!(!first.from_cache);
        assert!(second.from_cache);
        assert_eq!(first.reply, second.reply);
        assert_eq!(first.prompt_digest, second.prompt_digest);
        assert!(dir.path().join("mock").join(format!("{}.json", first.prompt_digest)).exists());
    }

    #[test]
    fn refresh_bypasses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let config = GatewayConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            refresh: true,
            ..GatewayConfig::replication()
        };
        let gateway = Gateway::new(config);
        let p = prompt("hello");
        for _ in 0..2 {
            let ex = gateway.complete(&p, &mock_spec(), &RequestOptions::default(), &RequestTag::default()).unwrap();
            assert!(!ex.from_cache);
        }
    }

    #[test]
    fn nonzero_temperature_rejected_under_replication() {
        let gateway = Gateway::offline();
        let opts = RequestOptions {
            temperature: 0.7,
            ..RequestOptions::default()
        };
        assert!(matches!(
            gateway.complete(&prompt("x"), &mock_spec(), &opts, &RequestTag::default()),
            Err(GatewayError::Config(_))
        ));
        let relaxed = Gateway::new(GatewayConfig::default());
        assert!(relaxed.complete(&prompt("x"), &mock_spec(), &opts, &RequestTag::default()).is_ok());
    }

    #[test]
    fn transient_failures_are_retried() {
        let (gateway, flaky) = flaky_gateway(2, 503);
        let ex = gateway.complete(&prompt("x"), &mock_spec(), &fast_opts(3), &RequestTag::default()).unwrap();
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_never_exceed_budget() {
        let (gateway, flaky) = flaky_gateway(10, 429);
        let err = gateway.complete(&prompt("x"), &mock_spec(), &fast_opts(2), &RequestTag::default()).unwrap_err();
        assert!(matches!(err, GatewayError::RateLimited { attempts: 3 }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (gateway, flaky) = flaky_gateway(10, 400);
        let err = gateway.complete(&prompt("x"), &mock_spec(), &fast_opts(5), &RequestTag::default()).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderError { status: 400, .. }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_is_monotone_and_capped() {
        let opts = RequestOptions {
            backoff_base_ms: 250,
            backoff_max_ms: 5_000,
            ..RequestOptions::default()
        };
        let delays: Vec<Duration> = (0..70).map(|k| opts.backoff(k)).collect();
        assert_eq!(delays[0], Duration::from_millis(250));
        assert_eq!(delays[2], Duration::from_millis(1000));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), Duration::from_millis(5_000));
    }

    #[test]
    fn digest_depends_on_model_options_and_prompt() {
        let spec = mock_spec();
        let opts = RequestOptions::default();
        let base = prompt_digest(&spec, &opts, &prompt("a"));
        assert_eq!(base, prompt_digest(&spec, &opts, &prompt("a")));
        assert_ne!(base, prompt_digest(&spec, &opts, &prompt("b")));
        let other_model = ModelSpec::mock(&MockBehavior::AlwaysCredible, 2);
        assert_ne!(base, prompt_digest(&other_model, &opts, &prompt("a")));
        let other_opts = RequestOptions {
            max_tokens: Some(16),
            ..opts.clone()
        };
        assert_ne!(base, prompt_digest(&spec, &other_opts, &prompt("a")));
        // Timeouts and retry budgets do not change the reply.
        let patient = RequestOptions {
            timeout_ms: 1,
            max_retries: 9,
            ..opts
        };
        assert_eq!(base, prompt_digest(&spec, &patient, &prompt("a")));
    }

    #[test]
    fn provider_short_names_deserialize() {
        for (name, want) in [
            ("\"openai\"", Provider::OpenaiCompatible),
            ("\"openai-compatible\"", Provider::OpenaiCompatible),
            ("\"gemini\"", Provider::GoogleCompatible),
        ] {
            assert_eq!(serde_json::from_str::<Provider>(name).unwrap(), want);
        }
        assert_eq!(serde_json::to_string(&Provider::OpenaiCompatible).unwrap(), "\"openai-compatible\"");
    }

    #[test]
    fn catalog_models_have_cutoffs() {
        let catalog = ModelSpec::catalog();
        assert_eq!(catalog.len(), 5);
        for (_, spec) in &catalog {
            assert!(spec.cutoff.is_some());
            spec.validate().unwrap();
        }
        assert_eq!(
            ModelSpec::from_catalog("gpt-4o-mini").unwrap().cutoff,
            YearMonth::new(2023, 10)
        );
    }

    #[test]
    fn missing_api_key_is_reported() {
        let gateway = Gateway::offline();
        let spec = ModelSpec {
            provider: Provider::OpenaiCompatible,
            model_id: "m".into(),
            cutoff: None,
            endpoint: "http://127.0.0.1:9".into(),
            auth_env: "IBI_TEST_KEY_THAT_IS_NOT_SET".into(),
        };
        assert!(matches!(
            gateway.complete(&prompt("x"), &spec, &RequestOptions::default(), &RequestTag::default()),
            Err(GatewayError::AuthMissing(var)) if var == "IBI_TEST_KEY_THAT_IS_NOT_SET"
        ));
    }
}
