//! Service configuration file and environment overrides.

use std::path::{Path, PathBuf};

use callsense_core::backends::BackendConfig;
use callsense_core::context::ContextPolicy;
use callsense_core::io::{load_config, ConfigError};
use serde::{Deserialize, Serialize};

/// Overrides every LLM backend's API key.
pub const ENV_API_KEY: &str = "CALLSENSE_API_KEY";
/// Overrides every LLM backend's endpoint.
pub const ENV_ENDPOINT: &str = "CALLSENSE_ENDPOINT";
/// Static bearer token required by the HTTP API.
pub const ENV_AUTH_TOKEN: &str = "CALLSENSE_AUTH_TOKEN";

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("callsense-data")
}
fn default_backend() -> String {
    callsense_core::backends::OracleBackend::DEFAULT_ID.into()
}
fn default_max_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Session logs, audit trail and reports live here.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_backend")]
    pub default_backend: String,
    #[serde(default)]
    pub default_policy: ContextPolicy,
    /// Backend calls in flight across all sessions.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// The rule oracle is always available under its default id.
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub outcome_rules: Option<PathBuf>,
    #[serde(default)]
    pub template_version: Option<String>,
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: default_listen(),
            data_dir: default_data_dir(),
            default_backend: default_backend(),
            default_policy: ContextPolicy::FullHistory,
            max_in_flight: default_max_in_flight(),
            backends: Vec::new(),
            taxonomy: None,
            outcome_rules: None,
            template_version: None,
            auth_token: None,
        }
    }
}

impl ServiceConfig {
    /// Reads a TOML or JSON file, then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let config: ServiceConfig = load_config(path)?;
        Ok(config.with_env(|key| std::env::var(key).ok()))
    }

    /// Applies overrides from `lookup`; empty values are ignored.
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        let get = |key: &str| lookup(key).filter(|v| !v.is_empty());
        let key = get(ENV_API_KEY);
        let endpoint = get(ENV_ENDPOINT);
        for backend in &mut self.backends {
            if let BackendConfig::Llm(llm) = backend {
                if let Some(key) = &key {
                    llm.api_key = Some(key.clone());
                }
                if let Some(endpoint) = &endpoint {
                    llm.endpoint = endpoint.clone();
                }
            }
        }
        if let Some(token) = get(ENV_AUTH_TOKEN) {
            self.auth_token = Some(token);
        }
        self
    }
}
