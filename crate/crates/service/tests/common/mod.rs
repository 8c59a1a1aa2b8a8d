#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use callsense_core::backends::{AnnotatorBackend, BackendError, Capabilities, OracleBackend, RawModelOutput};
use callsense_core::context::InferenceRequest;
use callsense_core::model::Conversation;
use callsense_core::simulator::{generate_corpus, CorpusConfig, NoiseProfile};

/// Simulated calls, `per_type` of each scenario type, moderate noise.
pub fn simulated(per_type: usize, seed: u64) -> Vec<Conversation> {
    generate_corpus(&CorpusConfig::uniform(per_type), &NoiseProfile::moderate(), seed)
        .unwrap()
        .into_iter()
        .map(|c| c.conversation)
        .collect()
}

/// The oracle, except that targets containing `garble` get prose back and
/// calls after `auth_after` successful ones fail authentication.
pub struct Rigged {
    pub id: String,
    pub oracle: OracleBackend,
    pub garble: Option<String>,
    pub auth_after: Option<usize>,
    pub calls: AtomicUsize,
}

impl Rigged {
    pub fn new(id: &str) -> Self {
        Rigged {
            id: id.into(),
            oracle: OracleBackend::new(id),
            garble: None,
            auth_after: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AnnotatorBackend for Rigged {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        self.oracle.capabilities()
    }

    fn complete(&self, request: &InferenceRequest) -> Result<RawModelOutput, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.auth_after.is_some_and(|limit| n >= limit) {
            return Err(BackendError::Authentication(401));
        }
        let mut out = self.oracle.complete(request)?;
        if let Some(marker) = &self.garble {
            if request.target_turn.text.contains(marker.as_str()) {
                out.text = "Sorry, I cannot label this turn.".into();
            }
        }
        Ok(out)
    }
}
