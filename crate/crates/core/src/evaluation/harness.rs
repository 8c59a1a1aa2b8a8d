//! End-to-end evaluation of one backend against a gold corpus.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::metrics::{classification_accuracy, entity_accuracy_for, macro_average, SlotScore};
use super::stats::{corpus_stats, CorpusStats};
use crate::backends::{
    annotate, AnnotateError, AnnotatorBackend, AuditSink, BackendError, FailureClass, OutputParser,
    RawModelOutput, RepairStep,
};
use crate::context::{ContextPolicy, InferenceRequest, RequestBuilder};
use crate::fraction::Fraction;
use crate::io::to_canonical_json;
use crate::model::{Conversation, SlotName, Task, TurnAnnotation};

pub const EVAL_REPORT_VERSION: &str = "eval-report-v1";

/// Scoring decisions written into every report.
pub const POLICY_NOTES: [&str; 5] = [
    "parse failures and backend errors score as wrong on every task; they are not excluded",
    "a turn without a parsed prediction has every slot null",
    "slot accuracy is computed over turns where gold or prediction fills the slot; both-null turns are excluded and an empty denominator is reported as not_applicable",
    "names match case-insensitively with whitespace collapsed; amounts match on currency and integer minor units; dates match on calendar day",
    "macro_average is the unweighted mean of the four task accuracies, rounded half-up to 2 decimals for display only",
];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("test corpus is empty")]
    EmptyCorpus,
    #[error("turn {turn_index} of {conversation_id} has no gold annotation")]
    MissingGold { conversation_id: String, turn_index: u32 },
    #[error("duplicate turn key {conversation_id}#{turn_index}")]
    DuplicateTurn { conversation_id: String, turn_index: u32 },
    #[error("audit write failed: {0}")]
    Audit(std::io::Error),
    #[error("annotation cache: {0}")]
    Cache(std::io::Error),
}

/// Raw outputs keyed by backend id and request fingerprint. File-backed
/// caches append one JSON line per entry, so an interrupted run resumes
/// where it stopped; an unreadable line (for example a torn final write) is
/// skipped on load.
#[derive(Debug, Default)]
pub struct AnnotationCache {
    entries: Mutex<HashMap<(String, String), RawModelOutput>>,
    file: Option<Mutex<File>>,
}

impl AnnotationCache {
    pub fn in_memory() -> Self {
        AnnotationCache::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<RawModelOutput>(&line) {
                    Ok(raw) => {
                        entries.insert((raw.backend.clone(), raw.request_fingerprint.clone()), raw);
                    }
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable cache line"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AnnotationCache {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, backend: &str, fingerprint: &str) -> Option<RawModelOutput> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(&(backend.to_string(), fingerprint.to_string()))
            .cloned()
    }

    pub fn put(&self, raw: &RawModelOutput) -> std::io::Result<()> {
        if let Some(file) = &self.file {
            let mut file = file.lock().expect("cache lock");
            // Newline first so a torn previous line cannot swallow this one.
            write!(file, "\n{}", to_canonical_json(raw))?;
            file.flush()?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert((raw.backend.clone(), raw.request_fingerprint.clone()), raw.clone());
        Ok(())
    }
}

/// Outcome for one test turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub conversation_id: String,
    pub turn_index: u32,
    pub request_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<TurnAnnotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repairs_applied: Vec<RepairStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_class: Option<FailureClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_error: Option<BackendError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub report_version: String,
    pub backend: String,
    pub n_conversations: u64,
    pub n_turns: u64,
    pub corpus: CorpusStats,
    pub per_task_accuracy: BTreeMap<Task, Fraction>,
    pub macro_average: Fraction,
    /// `macro_average` rounded half-up to 2 decimals.
    pub macro_average_display: String,
    pub per_slot_accuracy: BTreeMap<SlotName, SlotScore>,
    /// Turns whose output reached the parser but failed, over all turns.
    pub parse_failure_rate: Fraction,
    /// Turns with no output because the backend call failed, over all turns.
    pub backend_failure_rate: Fraction,
    /// Turns with a parsed prediction, over all turns.
    pub coverage: Fraction,
    pub failure_classes: BTreeMap<FailureClass, u64>,
    pub repairs_applied: BTreeMap<RepairStep, u64>,
    pub context_policy: ContextPolicy,
    pub template_version: String,
    pub output_schema_version: String,
    pub taxonomy_version: String,
    pub taxonomy_hash: String,
    pub alias_table_version: String,
    pub policy_notes: Vec<String>,
}

impl EvalReport {
    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self)
    }
}

/// Versions and settings recorded alongside the scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportContext {
    pub backend: String,
    pub policy: ContextPolicy,
    pub template_version: String,
    pub output_schema_version: String,
    pub taxonomy_version: String,
    pub taxonomy_hash: String,
    pub alias_table_version: String,
}

fn rate(count: u64, total: u64) -> Fraction {
    Fraction::new(count, total).expect("non-empty corpus")
}

/// Scores predictions against the gold corpus. Predictions are matched by
/// `(conversation_id, turn_index)`; turns with no matching prediction count
/// as backend failures.
pub fn score(
    context: &ReportContext,
    corpus: &[Conversation],
    predictions: &[TurnPrediction],
) -> Result<EvalReport, EvalError> {
    let gold = gold_turns(corpus)?;
    let by_key: HashMap<(&str, u32), &TurnPrediction> = predictions
        .iter()
        .map(|p| ((p.conversation_id.as_str(), p.turn_index), p))
        .collect();
    let aligned: Vec<Option<&TurnPrediction>> = gold
        .iter()
        .map(|(conv, idx, _)| by_key.get(&(conv.as_str(), *idx)).copied())
        .collect();
    let gold_ann: Vec<TurnAnnotation> = gold.iter().map(|(_, _, g)| g.clone()).collect();
    let pred_ann: Vec<Option<TurnAnnotation>> = aligned
        .iter()
        .map(|p| p.and_then(|p| p.annotation.clone()))
        .collect();

    let per_task_accuracy: BTreeMap<Task, Fraction> = Task::ALL
        .into_iter()
        .map(|task| (task, classification_accuracy(&pred_ann, &gold_ann, task).expect("aligned")))
        .collect();
    let macro_avg = macro_average(&per_task_accuracy).expect("all tasks");
    let per_slot_accuracy = SlotName::ALL
        .into_iter()
        .map(|slot| (slot, entity_accuracy_for(&pred_ann, &gold_ann, slot).expect("aligned")))
        .collect();

    let n = gold.len() as u64;
    let mut parse_failures = 0;
    let mut backend_failures = 0;
    let mut failure_classes = BTreeMap::new();
    let mut repairs_applied = BTreeMap::new();
    for p in &aligned {
        match p {
            None => backend_failures += 1,
            Some(p) if p.backend_error.is_some() => backend_failures += 1,
            Some(p) => {
                if let Some(class) = p.failure_class {
                    parse_failures += 1;
                    *failure_classes.entry(class).or_insert(0) += 1;
                }
                for step in &p.repairs_applied {
                    *repairs_applied.entry(*step).or_insert(0) += 1;
                }
            }
        }
    }
    let covered = pred_ann.iter().filter(|p| p.is_some()).count() as u64;
    let stats = corpus_stats(corpus);

    Ok(EvalReport {
        report_version: EVAL_REPORT_VERSION.into(),
        backend: context.backend.clone(),
        n_conversations: stats.n_conversations,
        n_turns: stats.n_turns,
        corpus: stats,
        per_task_accuracy,
        macro_average: macro_avg,
        macro_average_display: macro_avg.round_half_up(2),
        per_slot_accuracy,
        parse_failure_rate: rate(parse_failures, n),
        backend_failure_rate: rate(backend_failures, n),
        coverage: rate(covered, n),
        failure_classes,
        repairs_applied,
        context_policy: context.policy,
        template_version: context.template_version.clone(),
        output_schema_version: context.output_schema_version.clone(),
        taxonomy_version: context.taxonomy_version.clone(),
        taxonomy_hash: context.taxonomy_hash.clone(),
        alias_table_version: context.alias_table_version.clone(),
        policy_notes: POLICY_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

fn gold_turns(corpus: &[Conversation]) -> Result<Vec<(String, u32, TurnAnnotation)>, EvalError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for conv in corpus {
        for turn in &conv.turns {
            let gold = turn.gold.clone().ok_or_else(|| EvalError::MissingGold {
                conversation_id: conv.conversation_id.clone(),
                turn_index: turn.turn_index,
            })?;
            if !seen.insert((conv.conversation_id.as_str(), turn.turn_index)) {
                return Err(EvalError::DuplicateTurn {
                    conversation_id: conv.conversation_id.clone(),
                    turn_index: turn.turn_index,
                });
            }
            out.push((conv.conversation_id.clone(), turn.turn_index, gold));
        }
    }
    if out.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(out)
}

/// Counters that depend on cache state; kept out of the report so that
/// resumed and fresh runs produce identical reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub backend_errors: u64,
    pub skipped_after_auth_failure: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub predictions: Vec<TurnPrediction>,
    pub stats: RunStats,
}

pub struct Evaluator {
    builder: RequestBuilder,
    parser: OutputParser,
    policy: ContextPolicy,
    max_in_flight: usize,
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator::new(RequestBuilder::default(), OutputParser::default(), ContextPolicy::FullHistory, 4)
    }
}

#[allow(clippy::large_enum_variant)]
enum Slot {
    Done(TurnPrediction, Option<Outcome>),
    Fatal(EvalError),
}

enum Outcome {
    Hit,
    Called,
    Failed,
    Skipped,
}

impl Evaluator {
    pub fn new(builder: RequestBuilder, parser: OutputParser, policy: ContextPolicy, max_in_flight: usize) -> Self {
        Evaluator {
            builder,
            parser,
            policy,
            max_in_flight: max_in_flight.max(1),
        }
    }

    pub fn with_policy(mut self, policy: ContextPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn report_context(&self, backend: &str) -> ReportContext {
        ReportContext {
            backend: backend.to_string(),
            policy: self.policy,
            template_version: self.builder.template_version().to_string(),
            output_schema_version: crate::context::OUTPUT_SCHEMA_VERSION.to_string(),
            taxonomy_version: self.parser.taxonomy().version().to_string(),
            taxonomy_hash: self.parser.taxonomy().version_hash().to_string(),
            alias_table_version: self.parser.aliases().version.clone(),
        }
    }

    /// One request per test turn, in corpus order.
    pub fn requests(&self, corpus: &[Conversation]) -> Vec<(String, u32, InferenceRequest)> {
        corpus
            .iter()
            .flat_map(|conv| {
                let date = conv.call_date();
                conv.turns.iter().enumerate().map(move |(i, turn)| {
                    (
                        conv.conversation_id.clone(),
                        turn.turn_index,
                        self.builder.request_for(date, &conv.turns[..i], turn, self.policy),
                    )
                })
            })
            .collect()
    }

    /// Annotates every turn with at most `max_in_flight` concurrent backend
    /// calls, then scores. Cached outputs are reused without calling the
    /// backend. After an authentication failure no further calls are made
    /// and the remaining turns are reported as uncovered.
    pub fn run(
        &self,
        backend: &dyn AnnotatorBackend,
        corpus: &[Conversation],
        cache: &AnnotationCache,
        audit: &dyn AuditSink,
    ) -> Result<EvalRun, EvalError> {
        gold_turns(corpus)?;
        let requests = self.requests(corpus);
        let slots: Vec<OnceLock<Slot>> = (0..requests.len()).map(|_| OnceLock::new()).collect();
        let next = AtomicUsize::new(0);
        let halted = AtomicBool::new(false);
        let workers = self.max_in_flight.min(requests.len()).max(1);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((conv, idx, request)) = requests.get(i) else { break };
                    let slot = self.annotate_one(backend, conv, *idx, request, cache, audit, &halted);
                    let _ = slots[i].set(slot);
                });
            }
        });

        let mut predictions = Vec::with_capacity(requests.len());
        let mut stats = RunStats::default();
        for slot in slots {
            match slot.into_inner().expect("every index processed") {
                Slot::Fatal(e) => return Err(e),
                Slot::Done(prediction, outcome) => {
                    match outcome {
                        Some(Outcome::Hit) => stats.cache_hits += 1,
                        Some(Outcome::Called) => stats.backend_calls += 1,
                        Some(Outcome::Failed) => {
                            stats.backend_calls += 1;
                            stats.backend_errors += 1;
                        }
                        Some(Outcome::Skipped) => stats.skipped_after_auth_failure += 1,
                        None => {}
                    }
                    predictions.push(prediction);
                }
            }
        }
        let report = score(&self.report_context(backend.id()), corpus, &predictions)?;
        Ok(EvalRun {
            report,
            predictions,
            stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn annotate_one(
        &self,
        backend: &dyn AnnotatorBackend,
        conversation_id: &str,
        turn_index: u32,
        request: &InferenceRequest,
        cache: &AnnotationCache,
        audit: &dyn AuditSink,
        halted: &AtomicBool,
    ) -> Slot {
        let fingerprint = request.fingerprint();
        let mut prediction = TurnPrediction {
            conversation_id: conversation_id.to_string(),
            turn_index,
            request_fingerprint: fingerprint.clone(),
            annotation: None,
            repairs_applied: Vec::new(),
            failure_class: None,
            backend_error: None,
        };
        let (parse, outcome) = if let Some(raw) = cache.get(backend.id(), &fingerprint) {
            (self.parser.parse(&raw.text, request.reference_date), Outcome::Hit)
        } else if halted.load(Ordering::Relaxed) {
            prediction.backend_error = Some(BackendError::Unavailable(
                "skipped after authentication failure".into(),
            ));
            return Slot::Done(prediction, Some(Outcome::Skipped));
        } else {
            match annotate(backend, request, &self.parser, audit) {
                Ok(done) => {
                    if let Err(e) = cache.put(&done.raw) {
                        return Slot::Fatal(EvalError::Cache(e));
                    }
                    (done.parse, Outcome::Called)
                }
                Err(AnnotateError::Audit(e)) => return Slot::Fatal(EvalError::Audit(e)),
                Err(AnnotateError::Backend(e)) => {
                    if matches!(e, BackendError::Authentication(_)) {
                        halted.store(true, Ordering::Relaxed);
                    }
                    prediction.backend_error = Some(e);
                    return Slot::Done(prediction, Some(Outcome::Failed));
                }
            }
        };
        prediction.annotation = parse.annotation;
        prediction.repairs_applied = parse.repairs_applied;
        prediction.failure_class = parse.failure_class;
        Slot::Done(prediction, Some(outcome))
    }
}

/// Evaluates `backend` with default templates, taxonomy and aliases, no
/// cache and no audit trail.
pub fn run_eval(
    backend: &dyn AnnotatorBackend,
    corpus: &[Conversation],
    policy: ContextPolicy,
) -> Result<EvalReport, EvalError> {
    Evaluator::default()
        .with_policy(policy)
        .run(backend, corpus, &AnnotationCache::in_memory(), &crate::backends::NoAudit)
        .map(|run| run.report)
}

fn task_title(task: Task) -> &'static str {
    match task {
        Task::Emotion => "Emotion",
        Task::Sentiment => "Sentiment",
        Task::Intent => "Intent",
        Task::CallStage => "Call Stage",
    }
}

/// Side-by-side markdown tables: task accuracy with the macro average row,
/// then entity-level slot accuracy. Values are rounded half-up to 2 places.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let header = |out: &mut String, first: &str| {
        let _ = write!(out, "| {first} |");
        for r in reports {
            let _ = write!(out, " {} |", r.backend);
        }
        out.push('\n');
        out.push_str("|---|");
        out.push_str(&"---:|".repeat(reports.len()));
        out.push('\n');
    };
    header(&mut out, "Task");
    for task in Task::ALL {
        let _ = write!(out, "| {} |", task_title(task));
        for r in reports {
            let cell = r.per_task_accuracy.get(&task).map(|f| f.round_half_up(2)).unwrap_or_else(|| "n/a".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out.push_str("| All Tasks (avg) |");
    for r in reports {
        let _ = write!(out, " {} |", r.macro_average_display);
    }
    out.push_str("\n\n");
    header(&mut out, "Slot");
    for slot in SlotName::ALL {
        let _ = write!(out, "| {} |", slot.as_str());
        for r in reports {
            let cell = r
                .per_slot_accuracy
                .get(&slot)
                .and_then(SlotScore::accuracy)
                .map(|f| f.round_half_up(2))
                .unwrap_or_else(|| "n/a".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}
