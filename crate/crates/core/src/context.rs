//! Rolling-context inference requests and instruction-tuning export.
//!
//! A request for turn `t` carries a suffix of turns `0..t` chosen by a
//! [`ContextPolicy`], never anything at or after `t`. Rendering is canonical:
//! the same request always renders to the same bytes, and its fingerprint is
//! the SHA-256 of its canonical JSON.

use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::to_canonical_json;
use crate::model::{Conversation, Speaker, Turn};
use crate::taxonomy::IntentTaxonomy;

pub const OUTPUT_SCHEMA_VERSION: &str = "turn-annotation-v1";
pub const DEFAULT_TEMPLATE_VERSION: &str = "turn-annotate-v1";

/// Versioned instruction templates. `{intent_labels}` is replaced with the
/// active taxonomy's labels.
const TEMPLATES: &[(&str, &str)] = &[(
    "turn-annotate-v1",
    "You annotate one target turn of a debt-collection phone call. \
Use the preceding turns as context. Return exactly one JSON object with keys \
emotion, sentiment, intent, call_stage and slots.\n\
emotion: one of neutral, negative, positive.\n\
sentiment: one of none, refusal, insult, threat.\n\
intent: one of {intent_labels}.\n\
call_stage: one of opening, verification, negotiation, commitment, closure.\n\
slots: object with keys agent_name, customer_name, total_debt, days_past_due, \
promised_payment_date, promised_payment_amount, due_date. Use null for slots the \
target turn does not mention. Amounts are {\"currency\": \"VND\", \"minor_units\": <integer>}; \
dates are YYYY-MM-DD; days_past_due is an integer.",
)];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContextError {
    #[error("target index {index} out of range for {len} turns")]
    TargetOutOfRange { index: usize, len: usize },
    #[error("unknown instruction template version {0:?}")]
    UnknownTemplate(String),
    #[error("conversation {conversation_id} turn {turn_index} has no gold annotation")]
    MissingGold {
        conversation_id: String,
        turn_index: u32,
    },
    #[error("invalid length mix: {0}")]
    BadMix(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub enum ContextPolicy {
    #[default]
    FullHistory,
    LastKTurns(usize),
    CharBudget(usize),
}

impl std::str::FromStr for ContextPolicy {
    type Err = String;

    /// `full`, `last:K` or `chars:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let positive = |v: &str| match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("expected a positive integer in {s:?}")),
        };
        match s.split_once(':') {
            None if s == "full" => Ok(ContextPolicy::FullHistory),
            Some(("last", k)) => positive(k).map(ContextPolicy::LastKTurns),
            Some(("chars", b)) => positive(b).map(ContextPolicy::CharBudget),
            _ => Err(format!("unknown context policy {s:?}; use full, last:K or chars:N")),
        }
    }
}

impl fmt::Display for ContextPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextPolicy::FullHistory => f.write_str("full"),
            ContextPolicy::LastKTurns(k) => write!(f, "last:{k}"),
            ContextPolicy::CharBudget(b) => write!(f, "chars:{b}"),
        }
    }
}

/// File form of a policy: `k` iff `last_k_turns`, `budget_chars` iff `char_budget`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub mode: PolicyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_chars: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    FullHistory,
    LastKTurns,
    CharBudget,
}

impl TryFrom<PolicyDocument> for ContextPolicy {
    type Error = String;

    fn try_from(doc: PolicyDocument) -> Result<Self, Self::Error> {
        match (doc.mode, doc.k, doc.budget_chars) {
            (PolicyMode::FullHistory, None, None) => Ok(ContextPolicy::FullHistory),
            (PolicyMode::LastKTurns, Some(k), None) if k > 0 => Ok(ContextPolicy::LastKTurns(k)),
            (PolicyMode::CharBudget, None, Some(b)) if b > 0 => Ok(ContextPolicy::CharBudget(b)),
            (mode, k, budget) => Err(format!(
                "policy mode {mode:?} does not accept k={k:?}, budget_chars={budget:?}"
            )),
        }
    }
}

impl From<ContextPolicy> for PolicyDocument {
    fn from(policy: ContextPolicy) -> Self {
        match policy {
            ContextPolicy::FullHistory => PolicyDocument {
                mode: PolicyMode::FullHistory,
                k: None,
                budget_chars: None,
            },
            ContextPolicy::LastKTurns(k) => PolicyDocument {
                mode: PolicyMode::LastKTurns,
                k: Some(k),
                budget_chars: None,
            },
            ContextPolicy::CharBudget(b) => PolicyDocument {
                mode: PolicyMode::CharBudget,
                k: None,
                budget_chars: Some(b),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTurn {
    pub turn_index: u32,
    pub speaker: Speaker,
    pub text: String,
}

impl RequestTurn {
    fn from_turn(turn: &Turn) -> Self {
        RequestTurn {
            turn_index: turn.turn_index,
            speaker: turn.speaker,
            text: turn.text.clone(),
        }
    }

    /// One rendered transcript line, newline included.
    pub fn render_line(&self) -> String {
        format!("[{}] {}: {}\n", self.turn_index, self.speaker, self.text)
    }

    pub fn rendered_len(&self) -> usize {
        self.render_line().chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub instruction: String,
    pub template_version: String,
    pub context_turns: Vec<RequestTurn>,
    pub target_turn: RequestTurn,
    pub output_schema_version: String,
    /// Call date, when known; used to resolve dates given without a year.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_date: Option<NaiveDate>,
}

impl InferenceRequest {
    /// Context and target as plain text.
    pub fn render_input(&self) -> String {
        let mut out = String::new();
        if let Some(date) = self.reference_date {
            out.push_str(&format!("Call date: {}\n", date.format("%Y-%m-%d")));
        }
        out.push_str("Context:\n");
        if self.context_turns.is_empty() {
            out.push_str("(none)\n");
        }
        for turn in &self.context_turns {
            out.push_str(&turn.render_line());
        }
        out.push_str("Target turn:\n");
        out.push_str(&self.target_turn.render_line());
        out
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(to_canonical_json(self).as_bytes()))
    }
}

/// Longest suffix of `lengths` whose sum fits `budget`; returns its start.
fn budget_suffix_start(lengths: &[usize], budget: usize) -> usize {
    let mut used = 0usize;
    let mut start = lengths.len();
    while start > 0 {
        let next = used + lengths[start - 1];
        if next > budget {
            break;
        }
        used = next;
        start -= 1;
    }
    start
}

/// Builds requests under one instruction template and taxonomy.
#[derive(Debug, Clone)]
pub struct RequestBuilder {
    template_version: String,
    instruction: String,
}

impl RequestBuilder {
    pub fn new(template_version: &str, taxonomy: &IntentTaxonomy) -> Result<Self, ContextError> {
        let (_, template) = TEMPLATES
            .iter()
            .find(|(version, _)| *version == template_version)
            .ok_or_else(|| ContextError::UnknownTemplate(template_version.to_string()))?;
        Ok(RequestBuilder {
            template_version: template_version.to_string(),
            instruction: template.replace("{intent_labels}", &taxonomy.labels().join(", ")),
        })
    }

    pub fn template_version(&self) -> &str {
        &self.template_version
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn build_context(
        &self,
        conv: &Conversation,
        target_index: usize,
        policy: ContextPolicy,
    ) -> Result<InferenceRequest, ContextError> {
        let target = conv
            .turns
            .get(target_index)
            .ok_or(ContextError::TargetOutOfRange {
                index: target_index,
                len: conv.turns.len(),
            })?;
        Ok(self.request_for(conv.call_date(), &conv.turns[..target_index], target, policy))
    }

    /// Request for `target` given the turns before it.
    pub fn request_for(
        &self,
        reference_date: Option<NaiveDate>,
        history: &[Turn],
        target: &Turn,
        policy: ContextPolicy,
    ) -> InferenceRequest {
        let start = match policy {
            ContextPolicy::FullHistory => 0,
            ContextPolicy::LastKTurns(k) => history.len().saturating_sub(k),
            ContextPolicy::CharBudget(budget) => {
                let lengths: Vec<usize> = history
                    .iter()
                    .map(|t| RequestTurn::from_turn(t).rendered_len())
                    .collect();
                budget_suffix_start(&lengths, budget)
            }
        };
        InferenceRequest {
            instruction: self.instruction.clone(),
            template_version: self.template_version.clone(),
            context_turns: history[start..].iter().map(RequestTurn::from_turn).collect(),
            target_turn: RequestTurn::from_turn(target),
            output_schema_version: OUTPUT_SCHEMA_VERSION.to_string(),
            reference_date,
        }
    }

    /// One full-history request per turn, in turn order.
    pub fn render_post_call_input(&self, conv: &Conversation) -> Vec<InferenceRequest> {
        let date = conv.call_date();
        conv.turns
            .iter()
            .enumerate()
            .map(|(i, turn)| self.request_for(date, &conv.turns[..i], turn, ContextPolicy::FullHistory))
            .collect()
    }
}

impl Default for RequestBuilder {
    fn default() -> Self {
        RequestBuilder::new(DEFAULT_TEMPLATE_VERSION, &IntentTaxonomy::default())
            .expect("default template exists")
    }
}

pub fn build_context(
    conv: &Conversation,
    target_index: usize,
    policy: ContextPolicy,
) -> Result<InferenceRequest, ContextError> {
    RequestBuilder::default().build_context(conv, target_index, policy)
}

pub fn render_post_call_input(conv: &Conversation) -> Vec<InferenceRequest> {
    RequestBuilder::default().render_post_call_input(conv)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Stratified subsampling by context length (in turns).
///
/// `bucket_edges` are ascending upper bounds: bucket `i` holds context
/// lengths `< bucket_edges[i]` not covered by an earlier bucket, and a final
/// bucket holds the rest. `keep_rates` has one rate per bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthMix {
    pub bucket_edges: Vec<usize>,
    pub keep_rates: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LengthMix {
    fn default() -> Self {
        LengthMix {
            bucket_edges: Vec::new(),
            keep_rates: vec![1.0],
            seed: 0,
        }
    }
}

impl LengthMix {
    pub fn validate(&self) -> Result<(), ContextError> {
        if self.keep_rates.len() != self.bucket_edges.len() + 1 {
            return Err(ContextError::BadMix(format!(
                "{} edges need {} keep rates, got {}",
                self.bucket_edges.len(),
                self.bucket_edges.len() + 1,
                self.keep_rates.len()
            )));
        }
        if self.bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ContextError::BadMix("bucket edges must ascend".into()));
        }
        if self.keep_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(ContextError::BadMix("keep rates must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn bucket_of(&self, context_len: usize) -> usize {
        self.bucket_edges
            .iter()
            .position(|&edge| context_len < edge)
            .unwrap_or(self.bucket_edges.len())
    }

    fn bucket_label(&self, bucket: usize) -> String {
        let low = if bucket == 0 { 0 } else { self.bucket_edges[bucket - 1] };
        match self.bucket_edges.get(bucket) {
            Some(high) => format!("{low}..{high}"),
            None => format!("{low}.."),
        }
    }

    fn keeps(&self, bucket: usize, conversation_id: &str, turn_index: u32) -> bool {
        let rate = self.keep_rates[bucket];
        if rate >= 1.0 {
            return true;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(conversation_id.as_bytes());
        hasher.update(turn_index.to_le_bytes());
        let digest = hasher.finalize();
        let draw = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        (draw as f64 / u64::MAX as f64) < rate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub context_turns: String,
    pub candidates: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub template_version: String,
    pub output_schema_version: String,
    pub policy: ContextPolicy,
    pub conversations: usize,
    pub candidates: usize,
    pub emitted: usize,
    pub buckets: Vec<BucketCount>,
}

#[derive(Debug, Clone)]
pub struct TrainingExport {
    pub samples: Vec<InstructionSample>,
    pub report: ExportReport,
}

impl RequestBuilder {
    /// Streams one sample per (conversation, turn), minus any dropped by the
    /// length mix. Fails before emitting anything if a turn lacks gold.
    pub fn for_each_training_sample<'a, I, F>(
        &self,
        corpus: I,
        policy: ContextPolicy,
        mix: &LengthMix,
        mut emit: F,
    ) -> Result<ExportReport, ContextError>
    where
        I: IntoIterator<Item = &'a Conversation> + Clone,
        F: FnMut(InstructionSample),
    {
        mix.validate()?;
        for conv in corpus.clone() {
            if let Some(turn) = conv.turns.iter().find(|t| t.gold.is_none()) {
                return Err(ContextError::MissingGold {
                    conversation_id: conv.conversation_id.clone(),
                    turn_index: turn.turn_index,
                });
            }
        }
        let mut buckets: Vec<BucketCount> = (0..=mix.bucket_edges.len())
            .map(|b| BucketCount {
                context_turns: mix.bucket_label(b),
                candidates: 0,
                kept: 0,
            })
            .collect();
        let mut conversations = 0;
        let mut candidates = 0;
        let mut emitted = 0;
        for conv in corpus {
            conversations += 1;
            let date = conv.call_date();
            for (i, turn) in conv.turns.iter().enumerate() {
                let request = self.request_for(date, &conv.turns[..i], turn, policy);
                let bucket = mix.bucket_of(request.context_turns.len());
                candidates += 1;
                buckets[bucket].candidates += 1;
                if !mix.keeps(bucket, &conv.conversation_id, turn.turn_index) {
                    continue;
                }
                buckets[bucket].kept += 1;
                emitted += 1;
                let gold = turn.gold.as_ref().expect("checked above");
                emit(InstructionSample {
                    instruction: request.instruction.clone(),
                    input: request.render_input(),
                    output: to_canonical_json(gold),
                });
            }
        }
        Ok(ExportReport {
            template_version: self.template_version.clone(),
            output_schema_version: OUTPUT_SCHEMA_VERSION.to_string(),
            policy,
            conversations,
            candidates,
            emitted,
            buckets,
        })
    }

    pub fn export_training_triples(
        &self,
        corpus: &[Conversation],
        policy: ContextPolicy,
        mix: &LengthMix,
    ) -> Result<TrainingExport, ContextError> {
        let mut samples = Vec::new();
        let report = self.for_each_training_sample(corpus, policy, mix, |s| samples.push(s))?;
        Ok(TrainingExport { samples, report })
    }

    /// Writes samples as canonical JSON lines with fields instruction, input, output.
    pub fn write_training_jsonl<W: Write>(
        &self,
        corpus: &[Conversation],
        policy: ContextPolicy,
        mix: &LengthMix,
        out: &mut W,
    ) -> Result<ExportReport, ExportWriteError> {
        let mut io_error = None;
        let report = self.for_each_training_sample(corpus, policy, mix, |sample| {
            if io_error.is_none() {
                if let Err(e) = writeln!(out, "{}", to_canonical_json(&sample)) {
                    io_error = Some(e);
                }
            }
        })?;
        match io_error {
            Some(e) => Err(ExportWriteError::Io(e)),
            None => Ok(report),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportWriteError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("writing training export: {0}")]
    Io(#[from] std::io::Error),
}

pub fn export_training_triples(
    corpus: &[Conversation],
    policy: ContextPolicy,
    mix: &LengthMix,
) -> Result<TrainingExport, ContextError> {
    RequestBuilder::default().export_training_triples(corpus, policy, mix)
}
