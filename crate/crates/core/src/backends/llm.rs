//! Chat-completions client for a remote or self-hosted model server.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AnnotatorBackend, BackendError, Capabilities, RawModelOutput};
use crate::context::InferenceRequest;

pub const API_KEY_ENV: &str = "CALLSENSE_API_KEY";

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_true() -> bool {
    true
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub id: String,
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First retry delay; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Ask for a JSON object response.
    #[serde(default = "default_true")]
    pub json_response_format: bool,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl std::fmt::Debug for LlmConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmConfig")
            .field("id", &self.id)
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("timeout_ms", &self.timeout_ms)
            .field("max_retries", &self.max_retries)
            .field("max_in_flight", &self.max_in_flight)
            .field("backoff_ms", &self.backoff_ms)
            .field("json_response_format", &self.json_response_format)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LlmConfig {
    pub fn new(id: &str, endpoint: &str, model: &str) -> Self {
        LlmConfig {
            id: id.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_ms: default_backoff_ms(),
            json_response_format: true,
            api_key: None,
        }
    }

    /// Fills the API key from the environment when the config has none.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(capacity: usize) -> Self {
        Gate {
            free: Mutex::new(capacity.max(1)),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.released.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.released.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(BackendError),
}

pub struct LlmBackend {
    config: LlmConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl std::fmt::Debug for LlmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmBackend").field("config", &self.config).finish()
    }
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(LlmBackend {
            config,
            client,
            gate,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Chat-completions request body for `request`.
    pub fn request_body(&self, request: &InferenceRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                { "role": "system", "content": request.instruction },
                { "role": "user", "content": request.render_input() },
            ],
        });
        if self.config.json_response_format {
            body["response_format"] = json!({ "type": "json_object" });
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut call = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = match call.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(format!("timeout after {} ms", self.config.timeout_ms)),
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Attempt::Fail(BackendError::Authentication(status.as_u16()));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {}", status.as_u16()));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Attempt::Fail(BackendError::Transport(format!(
                "HTTP {}: {}",
                status.as_u16(),
                text.chars().take(200).collect::<String>()
            )));
        }
        let envelope: Value = match response.json() {
            Ok(v) => v,
            Err(e) => return Attempt::Fail(BackendError::MalformedEnvelope(e.to_string())),
        };
        match envelope
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        {
            Some(content) => Attempt::Done(content.to_string()),
            None => Attempt::Fail(BackendError::MalformedEnvelope(
                "missing choices[0].message.content".into(),
            )),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.min(16);
        Duration::from_millis(self.config.backoff_ms.saturating_mul(factor).min(30_000))
    }
}

impl AnnotatorBackend for LlmBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_batching: false,
            deterministic: false,
        }
    }

    fn complete(&self, request: &InferenceRequest) -> Result<RawModelOutput, BackendError> {
        let fingerprint = request.fingerprint();
        let body = self.request_body(request);
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    return Ok(RawModelOutput {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend: self.config.id.clone(),
                        request_fingerprint: fingerprint,
                        retries: attempt,
                    })
                }
                Attempt::Fail(error) => return Err(error),
                Attempt::Retry(reason) => {
                    tracing::warn!(backend = %self.config.id, attempt, %reason, "retryable failure");
                    last = reason;
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts: self.config.max_retries + 1,
            last,
        })
    }
}
