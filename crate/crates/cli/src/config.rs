use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ibi_core::corpus::YearMonth;
use ibi_core::gateway::{GatewayConfig, ModelSpec, Provider, RequestOptions};
use serde::Deserialize;

use crate::CliError;

/// Contents of the TOML config file. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub models: BTreeMap<String, ModelEntry>,
    pub gateway: GatewaySection,
    pub request: RequestSection,
    pub mock: MockSection,
}

/// Overrides a catalog model of the same alias, or defines a new one.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub provider: Option<Provider>,
    pub model_id: Option<String>,
    pub endpoint: Option<String>,
    pub auth_env: Option<String>,
    pub cutoff: Option<YearMonth>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub cache: bool,
    pub replication: bool,
    pub requests_per_minute: BTreeMap<String, u32>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            cache: true,
            replication: true,
            requests_per_minute: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestSection {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_base_ms: Option<u64>,
    pub backoff_max_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    pub script: Option<PathBuf>,
}

impl FileConfig {
    /// Reads `explicit`, else `<workdir>/ibi.toml` if it exists.
    pub fn load(explicit: Option<&Path>, workdir: &Path) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let default = workdir.join("ibi.toml");
                if !default.exists() {
                    return Ok(Self::default());
                }
                default
            }
        };
        let text = fs::read_to_string(&path).map_err(|e| CliError::domain(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::domain(format!("{}: {e}", path.display())))
    }

    /// Config entry, then catalog alias or id. Mock ids are handled by the
    /// caller.
    pub fn resolve_model(&self, name: &str) -> Result<ModelSpec, CliError> {
        let base = ModelSpec::from_catalog(name);
        let Some(entry) = self.models.get(name) else {
            return base.ok_or_else(|| {
                CliError::domain(format!(
                    "unknown model `{name}`: not in the config file or the built-in catalog ({})",
                    ModelSpec::catalog().iter().map(|(a, _)| *a).collect::<Vec<_>>().join(", ")
                ))
            });
        };
        let mut spec = match base {
            Some(spec) => spec,
            None => ModelSpec {
                provider: entry
                    .provider
                    .ok_or_else(|| CliError::domain(format!("model `{name}` in config needs a provider")))?,
                model_id: name.to_string(),
                cutoff: None,
                endpoint: String::new(),
                auth_env: String::new(),
            },
        };
        if let Some(p) = entry.provider {
            spec.provider = p;
        }
        if let Some(id) = &entry.model_id {
            spec.model_id = id.clone();
        }
        if let Some(e) = &entry.endpoint {
            spec.endpoint = e.clone();
        }
        if let Some(a) = &entry.auth_env {
            spec.auth_env = a.clone();
        }
        if entry.cutoff.is_some() {
            spec.cutoff = entry.cutoff;
        }
        Ok(spec)
    }

    pub fn request_options(&self) -> RequestOptions {
        let mut opts = RequestOptions::default();
        let r = &self.request;
        if let Some(t) = r.temperature {
            opts.temperature = t;
        }
        if r.max_tokens.is_some() {
            opts.max_tokens = r.max_tokens;
        }
        if let Some(v) = r.timeout_ms {
            opts.timeout_ms = v;
        }
        if let Some(v) = r.max_retries {
            opts.max_retries = v;
        }
        if let Some(v) = r.backoff_base_ms {
            opts.backoff_base_ms = v;
        }
        if let Some(v) = r.backoff_max_ms {
            opts.backoff_max_ms = v;
        }
        opts
    }

    pub fn gateway_config(&self, cache_dir: Option<PathBuf>, refresh: bool) -> Result<GatewayConfig, CliError> {
        let mut rpm = HashMap::new();
        for (name, limit) in &self.gateway.requests_per_minute {
            let provider: Provider = name
                .parse()
                .map_err(|_| CliError::domain(format!("unknown provider `{name}` in gateway.requests_per_minute")))?;
            rpm.insert(provider, *limit);
        }
        Ok(GatewayConfig {
            replication: self.gateway.replication,
            cache_dir: if self.gateway.cache { cache_dir } else { None },
            refresh,
            requests_per_minute: rpm,
        })
    }
}
