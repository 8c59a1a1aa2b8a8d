//! Deterministic stand-in backends for harness testing.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatorBackend, BackendError, Capabilities, OracleBackend, RawModelOutput};
use crate::context::InferenceRequest;
use crate::io::to_canonical_json;
use crate::model::{CallStageLabel, EmotionLabel, IntentLabel, SentimentLabel, Task, TurnAnnotation};
use crate::taxonomy::IntentTaxonomy;

use super::oracle::rule_oracle_annotate;

/// Replies from a fingerprint → text table, or a fixed fallback.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    responses: HashMap<String, String>,
    fallback: Option<String>,
}

impl ScriptedBackend {
    pub fn new(id: &str, responses: HashMap<String, String>, fallback: Option<String>) -> Self {
        ScriptedBackend {
            id: id.to_string(),
            responses,
            fallback,
        }
    }

    /// Answers every request with `text`.
    pub fn constant(id: &str, text: &str) -> Self {
        ScriptedBackend::new(id, HashMap::new(), Some(text.to_string()))
    }
}

impl AnnotatorBackend for ScriptedBackend {
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
        let fingerprint = request.fingerprint();
        let text = self
            .responses
            .get(&fingerprint)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::Unavailable(format!("no scripted reply for {fingerprint}")))?;
        Ok(RawModelOutput {
            text,
            latency_ms: 0,
            backend: self.id.clone(),
            request_fingerprint: fingerprint,
            retries: 0,
        })
    }
}

/// Rule oracle that returns a wrong label for one task on a fixed subset of
/// requests.
///
/// The subset has exactly `round_half_up(rate × n)` of the `n` distinct
/// request fingerprints, drawn by a seeded shuffle of the sorted list.
#[derive(Debug, Clone)]
pub struct FaultInjectingBackend {
    id: String,
    task: Task,
    corrupted: BTreeSet<String>,
    intents: Vec<String>,
}

impl FaultInjectingBackend {
    pub fn new(
        id: &str,
        requests: &[InferenceRequest],
        task: Task,
        rate: f64,
        seed: u64,
        taxonomy: &IntentTaxonomy,
    ) -> Self {
        let mut fingerprints: Vec<String> = requests.iter().map(InferenceRequest::fingerprint).collect();
        fingerprints.sort();
        fingerprints.dedup();
        let count = ((rate.clamp(0.0, 1.0) * fingerprints.len() as f64) + 0.5).floor() as usize;
        fingerprints.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        FaultInjectingBackend {
            id: id.to_string(),
            task,
            corrupted: fingerprints.into_iter().take(count).collect(),
            intents: taxonomy.labels().to_vec(),
        }
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted.len()
    }

    fn corrupt(&self, mut annotation: TurnAnnotation) -> TurnAnnotation {
        fn next<T: Copy + PartialEq>(all: &[T], current: T) -> T {
            let at = all.iter().position(|x| *x == current).unwrap_or(0);
            all[(at + 1) % all.len()]
        }
        match self.task {
            Task::Emotion => annotation.emotion = next(EmotionLabel::ALL, annotation.emotion),
            Task::Sentiment => annotation.sentiment = next(SentimentLabel::ALL, annotation.sentiment),
            Task::CallStage => annotation.call_stage = next(CallStageLabel::ALL, annotation.call_stage),
            Task::Intent => {
                let at = self
                    .intents
                    .iter()
                    .position(|l| l == annotation.intent.as_str())
                    .unwrap_or(0);
                annotation.intent = IntentLabel::new(self.intents[(at + 1) % self.intents.len()].clone());
            }
        }
        annotation
    }
}

impl AnnotatorBackend for FaultInjectingBackend {
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
        let mut raw = OracleBackend::new(self.id.clone()).complete(request)?;
        if self.corrupted.contains(&raw.request_fingerprint) {
            raw.text = to_canonical_json(&self.corrupt(rule_oracle_annotate(request)));
        }
        Ok(raw)
    }
}
