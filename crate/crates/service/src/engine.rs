//! The shared annotate path used by live sessions and batch runs.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use callsense_core::aggregation::{Aggregator, OutcomeRules};
use callsense_core::backends::{
    annotate, AnnotateError, AnnotatorBackend, AuditSink, BackendError, FailureClass, JsonlAudit, NoAudit,
    OracleBackend, OutputParser, RepairStep,
};
use callsense_core::context::{ContextError, ContextPolicy, InferenceRequest, RequestBuilder, DEFAULT_TEMPLATE_VERSION};
use callsense_core::evaluation::{AnnotationCache, Evaluator};
use callsense_core::model::{Turn, TurnAnnotation};
use callsense_core::taxonomy::IntentTaxonomy;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

/// Annotation outcome for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TurnStatus {
    Annotated {
        annotation: TurnAnnotation,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        repairs_applied: Vec<RepairStep>,
    },
    /// Retryable. The turn itself is kept.
    Failed {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure_class: Option<FailureClass>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend_error: Option<BackendError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    pub conversation_id: String,
    pub turn_index: u32,
    pub backend: String,
    pub request_fingerprint: String,
    pub latency_ms: u64,
    #[serde(flatten)]
    pub status: TurnStatus,
}

impl TurnResult {
    pub fn annotation(&self) -> Option<&TurnAnnotation> {
        match &self.status {
            TurnStatus::Annotated { annotation, .. } => Some(annotation),
            TurnStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend {id:?}: {source}")]
    BackendSetup { id: String, source: BackendError },
    #[error(transparent)]
    Config(#[from] callsense_core::io::ConfigError),
    #[error(transparent)]
    Taxonomy(#[from] callsense_core::taxonomy::TaxonomyError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("audit trail: {0}")]
    Audit(std::io::Error),
    #[error("annotation cache: {0}")]
    Cache(std::io::Error),
}

/// Templates, parser, aggregation rules and the backend registry.
pub struct Engine {
    builder: RequestBuilder,
    parser: OutputParser,
    aggregator: Aggregator,
    backends: BTreeMap<String, Arc<dyn AnnotatorBackend>>,
    audit: Arc<dyn AuditSink>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("template", &self.builder.template_version())
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for Engine {
    /// Default template, taxonomy and rules; the oracle backend; no audit.
    fn default() -> Self {
        Engine::new(
            RequestBuilder::default(),
            OutputParser::default(),
            Aggregator::default(),
            Arc::new(NoAudit),
        )
    }
}

impl Engine {
    /// Registers the rule oracle under its default id.
    pub fn new(
        builder: RequestBuilder,
        parser: OutputParser,
        aggregator: Aggregator,
        audit: Arc<dyn AuditSink>,
    ) -> Self {
        let mut engine = Engine {
            builder,
            parser,
            aggregator,
            backends: BTreeMap::new(),
            audit,
        };
        engine.register(Arc::new(OracleBackend::default()));
        engine
    }

    /// Builds everything named in `config`; the audit trail goes to
    /// `data_dir/audit.jsonl`.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, EngineError> {
        let taxonomy = match &config.taxonomy {
            Some(path) => IntentTaxonomy::load(path)?,
            None => IntentTaxonomy::default(),
        };
        let template = config.template_version.as_deref().unwrap_or(DEFAULT_TEMPLATE_VERSION);
        let builder = RequestBuilder::new(template, &taxonomy)?;
        let rules = match &config.outcome_rules {
            Some(path) => OutcomeRules::load(path)?,
            None => OutcomeRules::default(),
        };
        std::fs::create_dir_all(&config.data_dir).map_err(EngineError::Audit)?;
        let audit = JsonlAudit::open(&config.data_dir.join("audit.jsonl")).map_err(EngineError::Audit)?;
        let mut engine = Engine::new(
            builder,
            OutputParser::with_taxonomy(taxonomy),
            Aggregator::new(rules),
            Arc::new(audit),
        );
        for backend in &config.backends {
            let built = backend.build().map_err(|source| EngineError::BackendSetup {
                id: backend.id().to_string(),
                source,
            })?;
            engine.register(Arc::from(built));
        }
        Ok(engine)
    }

    /// Adds or replaces a backend under its own id.
    pub fn register(&mut self, backend: Arc<dyn AnnotatorBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn backend(&self, id: &str) -> Result<Arc<dyn AnnotatorBackend>, EngineError> {
        self.backends
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownBackend(id.to_string()))
    }

    pub fn backend_ids(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    pub fn builder(&self) -> &RequestBuilder {
        &self.builder
    }

    pub fn parser(&self) -> &OutputParser {
        &self.parser
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn audit(&self) -> &dyn AuditSink {
        self.audit.as_ref()
    }

    /// An evaluator sharing this engine's template and parser.
    pub fn evaluator(&self, policy: ContextPolicy, max_in_flight: usize) -> Evaluator {
        Evaluator::new(self.builder.clone(), self.parser.clone(), policy, max_in_flight)
    }

    pub fn request_for(
        &self,
        reference_date: Option<NaiveDate>,
        history: &[Turn],
        target: &Turn,
        policy: ContextPolicy,
    ) -> InferenceRequest {
        self.builder.request_for(reference_date, history, target, policy)
    }

    /// Runs one request, reusing `cache` when it holds an output for this
    /// backend and fingerprint. Backend and parse failures come back as
    /// [`TurnStatus::Failed`]; only audit and cache I/O errors are `Err`.
    pub fn annotate_turn(
        &self,
        backend: &dyn AnnotatorBackend,
        conversation_id: &str,
        turn_index: u32,
        request: &InferenceRequest,
        cache: Option<&AnnotationCache>,
    ) -> Result<TurnResult, EngineError> {
        let started = Instant::now();
        let fingerprint = request.fingerprint();
        let cached = cache.and_then(|c| c.get(backend.id(), &fingerprint));
        let parse = match cached {
            Some(raw) => self.parser.parse(&raw.text, request.reference_date),
            None => match annotate(backend, request, &self.parser, self.audit.as_ref()) {
                Ok(done) => {
                    if let Some(cache) = cache {
                        cache.put(&done.raw).map_err(EngineError::Cache)?;
                    }
                    done.parse
                }
                Err(AnnotateError::Audit(e)) => return Err(EngineError::Audit(e)),
                Err(AnnotateError::Backend(e)) => {
                    return Ok(TurnResult {
                        conversation_id: conversation_id.to_string(),
                        turn_index,
                        backend: backend.id().to_string(),
                        request_fingerprint: fingerprint,
                        latency_ms: started.elapsed().as_millis() as u64,
                        status: TurnStatus::Failed {
                            reason: e.to_string(),
                            failure_class: None,
                            backend_error: Some(e),
                        },
                    })
                }
            },
        };
        let status = match parse.annotation {
            Some(annotation) => TurnStatus::Annotated {
                annotation,
                repairs_applied: parse.repairs_applied,
            },
            None => TurnStatus::Failed {
                reason: parse.detail.unwrap_or_else(|| "unparseable output".into()),
                failure_class: parse.failure_class,
                backend_error: None,
            },
        };
        Ok(TurnResult {
            conversation_id: conversation_id.to_string(),
            turn_index,
            backend: backend.id().to_string(),
            request_fingerprint: fingerprint,
            latency_ms: started.elapsed().as_millis() as u64,
            status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use callsense_core::backends::ScriptedBackend;
    use callsense_core::model::Speaker;

    fn target() -> (Vec<Turn>, Turn) {
        (
            vec![Turn::new(0, Speaker::Agent, "Em chào anh, em là Hà bên tài chính.")],
            Turn::new(1, Speaker::Customer, "Ừ, chào em."),
        )
    }

    #[test]
    fn oracle_is_always_registered() {
        let engine = Engine::default();
        assert_eq!(engine.backend_ids(), vec!["rule-oracle".to_string()]);
        assert!(matches!(engine.backend("gpt"), Err(EngineError::UnknownBackend(id)) if id == "gpt"));
    }

    #[test]
    fn parse_failures_are_reported_not_raised() {
        let engine = Engine::default();
        let (history, turn) = target();
        let request = engine.request_for(None, &history, &turn, ContextPolicy::FullHistory);
        let backend = ScriptedBackend::constant("prose", "cannot say");
        let result = engine.annotate_turn(&backend, "c", 1, &request, None).unwrap();
        assert!(matches!(
            result.status,
            TurnStatus::Failed { failure_class: Some(FailureClass::NotJson), .. }
        ));
        let backend = ScriptedBackend::new("silent", Default::default(), None);
        let result = engine.annotate_turn(&backend, "c", 1, &request, None).unwrap();
        assert!(matches!(result.status, TurnStatus::Failed { backend_error: Some(_), .. }));
    }

    #[test]
    fn result_json_is_flat() {
        let engine = Engine::default();
        let (history, turn) = target();
        let request = engine.request_for(None, &history, &turn, ContextPolicy::FullHistory);
        let result = engine
            .annotate_turn(&OracleBackend::default(), "c", 1, &request, None)
            .unwrap();
        let json: serde_json::Value = serde_json::to_value(&result).unwrap();
        assert_eq!(json["status"], "annotated");
        assert!(json["annotation"]["intent"].is_string());
        let back: TurnResult = serde_json::from_value(json).unwrap();
        assert_eq!(back, result);
    }
}
