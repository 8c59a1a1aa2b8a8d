//! Post-call batch annotation through the same per-turn path as sessions.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::OnceLock;

use callsense_core::aggregation::CallRecord;
use callsense_core::backends::{AnnotatorBackend, BackendError};
use callsense_core::context::{ContextPolicy, InferenceRequest};
use callsense_core::evaluation::AnnotationCache;
use callsense_core::io::{read_transcripts, to_canonical_json, write_jsonl, TranscriptError};
use callsense_core::model::Conversation;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, TurnResult, TurnStatus};

pub const MANIFEST_VERSION: &str = "batch-manifest-v1";
pub const SKIPPED_REASON: &str = "skipped after authentication failure";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub conversation_id: String,
    pub turn_index: u32,
    pub reason: String,
}

/// What a batch run produced and what it is missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub manifest_version: String,
    pub backend: String,
    pub policy: ContextPolicy,
    pub template_version: String,
    pub n_conversations: usize,
    pub n_turns: usize,
    pub n_annotated: usize,
    pub n_failed: usize,
    pub n_records: usize,
    /// Turns without an annotation, in corpus order.
    pub gaps: Vec<Gap>,
    /// Conversations with no annotated turn, hence no record.
    pub unrecorded: Vec<String>,
    pub halted_after_auth_failure: bool,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// One per turn, in corpus order.
    pub annotations: Vec<TurnResult>,
    pub records: Vec<CallRecord>,
    pub manifest: BatchManifest,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Input(#[from] TranscriptError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub backend: String,
    pub policy: ContextPolicy,
    pub max_in_flight: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            backend: callsense_core::backends::OracleBackend::DEFAULT_ID.into(),
            policy: ContextPolicy::FullHistory,
            max_in_flight: 8,
        }
    }
}

/// Annotates every turn, then aggregates each conversation with at least one
/// annotated turn. Outputs found in `cache` are reused, which makes an
/// interrupted run resumable.
pub fn batch_annotate(
    engine: &Engine,
    corpus: &[Conversation],
    options: &BatchOptions,
    cache: Option<&AnnotationCache>,
) -> Result<BatchOutput, EngineError> {
    let backend = engine.backend(&options.backend)?;
    let jobs: Vec<(&Conversation, u32, InferenceRequest)> = corpus
        .iter()
        .flat_map(|conv| {
            let date = conv.call_date();
            conv.turns.iter().enumerate().map(move |(i, turn)| {
                (
                    conv,
                    turn.turn_index,
                    engine.request_for(date, &conv.turns[..i], turn, options.policy),
                )
            })
        })
        .collect();
    let slots: Vec<OnceLock<Result<TurnResult, EngineError>>> = jobs.iter().map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let halted = AtomicBool::new(false);
    let workers = options.max_in_flight.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((conv, turn_index, request)) = jobs.get(i) else { break };
                let result = annotate_job(
                    engine,
                    backend.as_ref(),
                    &conv.conversation_id,
                    *turn_index,
                    request,
                    cache,
                    &halted,
                );
                let _ = slots[i].set(result);
            });
        }
    });
    let mut annotations = Vec::with_capacity(jobs.len());
    for slot in slots {
        annotations.push(slot.into_inner().expect("every job ran")?);
    }

    let mut records = Vec::new();
    let mut unrecorded = Vec::new();
    let mut gaps = Vec::new();
    let mut offset = 0;
    for conv in corpus {
        let results = &annotations[offset..offset + conv.turns.len()];
        offset += conv.turns.len();
        for result in results {
            if let TurnStatus::Failed { reason, .. } = &result.status {
                gaps.push(Gap {
                    conversation_id: conv.conversation_id.clone(),
                    turn_index: result.turn_index,
                    reason: reason.clone(),
                });
            }
        }
        let partial: Vec<_> = results.iter().map(TurnResult::annotation).collect();
        if partial.iter().all(Option::is_none) {
            unrecorded.push(conv.conversation_id.clone());
            continue;
        }
        records.push(
            engine
                .aggregator()
                .aggregate_partial(conv, &partial)
                .expect("one result per turn"),
        );
    }
    let manifest = BatchManifest {
        manifest_version: MANIFEST_VERSION.into(),
        backend: options.backend.clone(),
        policy: options.policy,
        template_version: engine.builder().template_version().to_string(),
        n_conversations: corpus.len(),
        n_turns: annotations.len(),
        n_annotated: annotations.len() - gaps.len(),
        n_failed: gaps.len(),
        n_records: records.len(),
        gaps,
        unrecorded,
        halted_after_auth_failure: halted.into_inner(),
    };
    Ok(BatchOutput {
        annotations,
        records,
        manifest,
    })
}

fn annotate_job(
    engine: &Engine,
    backend: &dyn AnnotatorBackend,
    conversation_id: &str,
    turn_index: u32,
    request: &InferenceRequest,
    cache: Option<&AnnotationCache>,
    halted: &AtomicBool,
) -> Result<TurnResult, EngineError> {
    let fingerprint = request.fingerprint();
    let cached = cache.is_some_and(|c| c.get(backend.id(), &fingerprint).is_some());
    if halted.load(Ordering::Relaxed) && !cached {
        let error = BackendError::Unavailable(SKIPPED_REASON.into());
        return Ok(TurnResult {
            conversation_id: conversation_id.to_string(),
            turn_index,
            backend: backend.id().to_string(),
            request_fingerprint: fingerprint,
            latency_ms: 0,
            status: TurnStatus::Failed {
                reason: SKIPPED_REASON.into(),
                failure_class: None,
                backend_error: Some(error),
            },
        });
    }
    let result = engine.annotate_turn(backend, conversation_id, turn_index, request, cache)?;
    if let TurnStatus::Failed {
        backend_error: Some(BackendError::Authentication(_)),
        ..
    } = &result.status
    {
        halted.store(true, Ordering::Relaxed);
    }
    Ok(result)
}

impl BatchOutput {
    /// Writes `annotations.jsonl`, `records.jsonl` and `manifest.json`.
    pub fn write(&self, out_dir: &Path) -> Result<(), BatchError> {
        let err = |path: PathBuf| move |source| BatchError::Output { path, source };
        std::fs::create_dir_all(out_dir).map_err(err(out_dir.to_path_buf()))?;
        let path = out_dir.join("annotations.jsonl");
        write_jsonl(&path, &self.annotations).map_err(err(path.clone()))?;
        let path = out_dir.join("records.jsonl");
        write_jsonl(&path, &self.records).map_err(err(path.clone()))?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, to_canonical_json(&self.manifest) + "\n").map_err(err(path.clone()))?;
        Ok(())
    }
}

/// Reads a transcript file, annotates it and writes the outputs.
pub fn batch_annotate_file(
    engine: &Engine,
    input: &Path,
    out_dir: &Path,
    options: &BatchOptions,
    cache: Option<&AnnotationCache>,
) -> Result<BatchOutput, BatchError> {
    let corpus = read_transcripts(input)?;
    let output = batch_annotate(engine, &corpus, options, cache)?;
    output.write(out_dir)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use callsense_core::backends::ScriptedBackend;
    use callsense_core::model::{Speaker, Turn};
    use std::sync::Arc;

    fn conv(id: &str, n: u32) -> Conversation {
        Conversation::new(
            id,
            (0..n)
                .map(|i| Turn::new(i, Speaker::Customer, format!("Dạ em nghe, lần {i}.")))
                .collect(),
        )
    }

    #[test]
    fn empty_corpus_gives_a_zero_manifest() {
        let out = batch_annotate(&Engine::default(), &[], &BatchOptions::default(), None).unwrap();
        assert!(out.annotations.is_empty() && out.records.is_empty());
        assert_eq!(out.manifest.n_conversations, 0);
        assert_eq!(out.manifest.n_turns, 0);
        assert_eq!(out.manifest.n_records, 0);
        assert!(out.manifest.gaps.is_empty());
    }

    #[test]
    fn unparseable_backend_leaves_gaps_and_no_records() {
        let mut engine = Engine::default();
        engine.register(Arc::new(ScriptedBackend::constant("prose", "no idea")));
        let options = BatchOptions {
            backend: "prose".into(),
            ..Default::default()
        };
        let out = batch_annotate(&engine, &[conv("a", 3), conv("b", 2)], &options, None).unwrap();
        assert_eq!(out.annotations.len(), 5);
        assert_eq!(out.manifest.n_failed, 5);
        assert_eq!(out.manifest.unrecorded, vec!["a".to_string(), "b".to_string()]);
        assert!(out.records.is_empty());
    }
}
