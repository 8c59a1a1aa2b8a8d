//! Annotator backends behind one interface, plus output parsing and audit.

pub mod llm;
pub mod mock;
pub mod oracle;
pub mod parse;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::context::InferenceRequest;
use crate::io::to_canonical_json;
use crate::model::TurnAnnotation;
pub use llm::{LlmBackend, LlmConfig};
pub use mock::{FaultInjectingBackend, ScriptedBackend};
pub use oracle::rule_oracle_annotate;
pub use parse::{parse_structured_output, FailureClass, OutputParser, ParseOutcome, RepairStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_batching: bool,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawModelOutput {
    pub text: String,
    pub latency_ms: u64,
    pub backend: String,
    pub request_fingerprint: String,
    /// Retries taken before this output arrived.
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("authentication failed (HTTP {0})")]
    Authentication(u16),
    #[error("malformed response envelope: {0}")]
    MalformedEnvelope(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// One annotation provider. Implementations must tolerate concurrent calls.
pub trait AnnotatorBackend: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn complete(&self, request: &InferenceRequest) -> Result<RawModelOutput, BackendError>;
}

/// The rule oracle as a backend; emits canonical JSON.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    id: String,
}

impl OracleBackend {
    pub const DEFAULT_ID: &'static str = "rule-oracle";

    pub fn new(id: impl Into<String>) -> Self {
        OracleBackend { id: id.into() }
    }
}

impl Default for OracleBackend {
    fn default() -> Self {
        OracleBackend::new(Self::DEFAULT_ID)
    }
}

impl AnnotatorBackend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_batching: true,
            deterministic: true,
        }
    }

    fn complete(&self, request: &InferenceRequest) -> Result<RawModelOutput, BackendError> {
        let started = Instant::now();
        let annotation = rule_oracle_annotate(request);
        Ok(RawModelOutput {
            text: to_canonical_json(&annotation),
            latency_ms: started.elapsed().as_millis() as u64,
            backend: self.id.clone(),
            request_fingerprint: request.fingerprint(),
            retries: 0,
        })
    }
}

/// Everything retained about one annotate call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub backend: String,
    pub request_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawModelOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<ParseOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BackendError>,
}

pub trait AuditSink: Send + Sync {
    fn record(&self, entry: &AuditEntry) -> std::io::Result<()>;
}

/// Keeps entries in memory.
#[derive(Debug, Default)]
pub struct MemoryAudit {
    entries: Mutex<Vec<AuditEntry>>,
}

impl MemoryAudit {
    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit lock").clone()
    }
}

impl AuditSink for MemoryAudit {
    fn record(&self, entry: &AuditEntry) -> std::io::Result<()> {
        self.entries.lock().expect("audit lock").push(entry.clone());
        Ok(())
    }
}

/// Appends entries as canonical JSON lines, synced to disk per entry.
#[derive(Debug)]
pub struct JsonlAudit {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlAudit {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlAudit {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AuditSink for JsonlAudit {
    fn record(&self, entry: &AuditEntry) -> std::io::Result<()> {
        let mut file = self.file.lock().expect("audit lock");
        writeln!(file, "{}", to_canonical_json(entry))?;
        file.sync_data()
    }
}

/// Discards entries. For callers that keep their own trail.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoAudit;

impl AuditSink for NoAudit {
    fn record(&self, _entry: &AuditEntry) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotated {
    pub raw: RawModelOutput,
    pub parse: ParseOutcome,
}

impl Annotated {
    pub fn annotation(&self) -> Option<&TurnAnnotation> {
        self.parse.annotation.as_ref()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("audit write failed: {0}")]
    Audit(#[from] std::io::Error),
}

/// Runs `backend` on `request` and parses the output. The audit entry is
/// written before anything is returned.
pub fn annotate(
    backend: &dyn AnnotatorBackend,
    request: &InferenceRequest,
    parser: &OutputParser,
    audit: &dyn AuditSink,
) -> Result<Annotated, AnnotateError> {
    match backend.complete(request) {
        Ok(raw) => {
            let parse = parser.parse(&raw.text, request.reference_date);
            audit.record(&AuditEntry {
                backend: backend.id().to_string(),
                request_fingerprint: raw.request_fingerprint.clone(),
                raw: Some(raw.clone()),
                parse: Some(parse.clone()),
                error: None,
            })?;
            Ok(Annotated { raw, parse })
        }
        Err(error) => {
            audit.record(&AuditEntry {
                backend: backend.id().to_string(),
                request_fingerprint: request.fingerprint(),
                raw: None,
                parse: None,
                error: Some(error.clone()),
            })?;
            Err(AnnotateError::Backend(error))
        }
    }
}

/// Backend selection as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Oracle {
        #[serde(default = "default_oracle_id")]
        id: String,
    },
    Llm(LlmConfig),
}

fn default_oracle_id() -> String {
    OracleBackend::DEFAULT_ID.to_string()
}

impl BackendConfig {
    pub fn id(&self) -> &str {
        match self {
            BackendConfig::Oracle { id } => id,
            BackendConfig::Llm(config) => &config.id,
        }
    }

    pub fn build(&self) -> Result<Box<dyn AnnotatorBackend>, BackendError> {
        Ok(match self {
            BackendConfig::Oracle { id } => Box::new(OracleBackend::new(id.clone())),
            BackendConfig::Llm(config) => Box::new(LlmBackend::new(config.clone())?),
        })
    }
}
