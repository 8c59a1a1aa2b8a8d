use std::sync::atomic::{AtomicUsize, Ordering};

use callsense_core::backends::{
    AnnotatorBackend, BackendError, Capabilities, FaultInjectingBackend, MemoryAudit, NoAudit, OracleBackend,
    RawModelOutput, ScriptedBackend,
};
use callsense_core::context::{ContextPolicy, InferenceRequest};
use callsense_core::evaluation::{
    comparison_table, run_eval, AnnotationCache, EvalReport, Evaluator, SlotScore,
};
use callsense_core::fraction::Fraction;
use callsense_core::model::{Conversation, SlotName, Task};
use callsense_core::simulator::noise::NoiseProfile;
use callsense_core::simulator::{generate_corpus, CorpusConfig};
use callsense_core::taxonomy::IntentTaxonomy;

fn corpus(per_type: usize, seed: u64) -> Vec<Conversation> {
    generate_corpus(&CorpusConfig::uniform(per_type), &NoiseProfile::moderate(), seed)
        .unwrap()
        .into_iter()
        .map(|c| c.conversation)
        .collect()
}

fn one() -> Fraction {
    Fraction::new(1, 1).unwrap()
}

fn assert_perfect(report: &EvalReport) {
    for task in Task::ALL {
        assert_eq!(report.per_task_accuracy[&task], one(), "{task}");
    }
    for slot in SlotName::ALL {
        match report.per_slot_accuracy[&slot] {
            SlotScore::Scored { accuracy, .. } => assert_eq!(accuracy, one(), "{slot}"),
            SlotScore::NotApplicable => panic!("{slot} never filled"),
        }
    }
    assert_eq!(report.parse_failure_rate, Fraction::new(0, 1).unwrap());
    assert_eq!(report.coverage, one());
}

#[test]
fn oracle_scores_perfectly_on_simulated_calls() {
    let conversations = corpus(10, 5);
    assert_eq!(conversations.len(), 50);
    let report = run_eval(&OracleBackend::default(), &conversations, ContextPolicy::FullHistory).unwrap();
    assert_perfect(&report);
    assert_eq!(report.macro_average_display, "1.00");
    assert_eq!(report.n_conversations, 50);
}

#[test]
fn unparseable_backend_scores_zero() {
    let conversations = corpus(2, 9);
    let backend = ScriptedBackend::constant("prose", "Sorry, I cannot help with that.");
    let report = run_eval(&backend, &conversations, ContextPolicy::FullHistory).unwrap();
    let zero = Fraction::new(0, 1).unwrap();
    for task in Task::ALL {
        assert_eq!(report.per_task_accuracy[&task], zero);
    }
    assert_eq!(report.parse_failure_rate, one());
    assert_eq!(report.coverage, zero);
    assert_eq!(report.macro_average_display, "0.00");
    assert!(report.per_slot_accuracy.values().all(|s| s.accuracy().is_none_or(|a| a == zero)));
}

#[test]
fn intent_fault_injection_lands_on_target() {
    let conversations = corpus(8, 21);
    let evaluator = Evaluator::default();
    let requests: Vec<InferenceRequest> = evaluator.requests(&conversations).into_iter().map(|r| r.2).collect();
    let backend = FaultInjectingBackend::new("faulty", &requests, Task::Intent, 0.23, 4, &IntentTaxonomy::default());
    let run = evaluator.run(&backend, &conversations, &AnnotationCache::in_memory(), &NoAudit).unwrap();
    let intent = run.report.per_task_accuracy[&Task::Intent].value();
    assert!((intent - 0.77).abs() <= 0.01, "intent {intent}");
    for task in [Task::Emotion, Task::Sentiment, Task::CallStage] {
        assert_eq!(run.report.per_task_accuracy[&task], one());
    }
}

#[test]
fn report_is_independent_of_concurrency() {
    let conversations = corpus(3, 2);
    let serial = Evaluator::default().with_max_in_flight(1);
    let wide = Evaluator::default().with_max_in_flight(16);
    let a = serial.run(&OracleBackend::default(), &conversations, &AnnotationCache::in_memory(), &NoAudit).unwrap();
    let b = wide.run(&OracleBackend::default(), &conversations, &AnnotationCache::in_memory(), &NoAudit).unwrap();
    assert_eq!(a.report.to_canonical_json(), b.report.to_canonical_json());
    assert_eq!(a.predictions, b.predictions);
}

/// Oracle that fails after a fixed number of calls.
struct Flaky {
    inner: OracleBackend,
    budget: AtomicUsize,
}

impl AnnotatorBackend for Flaky {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
    fn complete(&self, request: &InferenceRequest) -> Result<RawModelOutput, BackendError> {
        let left = self.budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1));
        match left {
            Ok(_) => self.inner.complete(request),
            Err(_) => Err(BackendError::Unavailable("budget spent".into())),
        }
    }
}

#[test]
fn resumes_from_file_cache() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let conversations = corpus(2, 13);
    let n_turns: usize = conversations.iter().map(|c| c.turns.len()).sum();
    let evaluator = Evaluator::default().with_max_in_flight(3);

    let fresh = evaluator
        .run(&OracleBackend::default(), &conversations, &AnnotationCache::in_memory(), &NoAudit)
        .unwrap();

    let flaky = Flaky {
        inner: OracleBackend::default(),
        budget: AtomicUsize::new(n_turns / 2),
    };
    let partial = evaluator.run(&flaky, &conversations, &AnnotationCache::open(&path).unwrap(), &NoAudit).unwrap();
    assert!(partial.report.coverage < one());
    assert_eq!(partial.stats.backend_errors as usize, n_turns - n_turns / 2);

    // Simulate a crash mid-write.
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .and_then(|mut f| std::io::Write::write_all(&mut f, b"\n{\"backend\":\"rule-or"))
        .unwrap();

    let audit = MemoryAudit::default();
    let cache = AnnotationCache::open(&path).unwrap();
    assert_eq!(cache.len(), n_turns / 2);
    let resumed = evaluator.run(&OracleBackend::default(), &conversations, &cache, &audit).unwrap();
    assert_eq!(resumed.stats.cache_hits as usize, n_turns / 2);
    assert_eq!(resumed.stats.backend_calls as usize, n_turns - n_turns / 2);
    assert_eq!(audit.entries().len(), n_turns - n_turns / 2);
    assert_eq!(resumed.report.to_canonical_json(), fresh.report.to_canonical_json());

    let replay = evaluator
        .run(&ScriptedBackend::new("rule-oracle", Default::default(), None), &conversations, &AnnotationCache::open(&path).unwrap(), &NoAudit)
        .unwrap();
    assert_eq!(replay.stats.backend_calls, 0);
    assert_eq!(replay.report.to_canonical_json(), fresh.report.to_canonical_json());
}

struct Locked;

impl AnnotatorBackend for Locked {
    fn id(&self) -> &str {
        "locked"
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_batching: false, deterministic: true }
    }
    fn complete(&self, _: &InferenceRequest) -> Result<RawModelOutput, BackendError> {
        Err(BackendError::Authentication(401))
    }
}

#[test]
fn authentication_failure_yields_partial_report() {
    let conversations = corpus(1, 3);
    let run = Evaluator::default()
        .with_max_in_flight(1)
        .run(&Locked, &conversations, &AnnotationCache::in_memory(), &NoAudit)
        .unwrap();
    assert_eq!(run.stats.backend_calls, 1);
    assert_eq!(run.report.coverage, Fraction::new(0, 1).unwrap());
    assert_eq!(run.report.backend_failure_rate, one());
    assert_eq!(run.report.parse_failure_rate, Fraction::new(0, 1).unwrap());
}

#[test]
fn missing_gold_is_rejected() {
    let mut conversations = corpus(1, 1);
    conversations[0].turns[1].gold = None;
    assert!(run_eval(&OracleBackend::default(), &conversations, ContextPolicy::FullHistory).is_err());
    assert!(run_eval(&OracleBackend::default(), &[], ContextPolicy::FullHistory).is_err());
}

#[test]
fn comparison_table_layout() {
    let conversations = corpus(1, 8);
    let good = run_eval(&OracleBackend::default(), &conversations, ContextPolicy::FullHistory).unwrap();
    let bad = run_eval(&ScriptedBackend::constant("prose", "no"), &conversations, ContextPolicy::FullHistory).unwrap();
    let table = comparison_table(&[good, bad]);
    assert!(table.starts_with("| Task | rule-oracle | prose |\n"));
    assert!(table.contains("| Call Stage | 1.00 | 0.00 |\n"));
    assert!(table.contains("| All Tasks (avg) | 1.00 | 0.00 |\n"));
    assert!(table.contains("| promised_payment_amount | 1.00 | 0.00 |\n"));
}
