mod common;

use std::sync::Arc;

use callsense_core::evaluation::AnnotationCache;
use callsense_core::io::{read_jsonl, write_transcripts};
use callsense_core::model::{Conversation, Turn};
use callsense_service::batch::{batch_annotate, batch_annotate_file, BatchError, BatchManifest, BatchOptions};
use callsense_service::{Engine, TurnResult};
use common::{simulated, Rigged};

/// `n_calls` conversations holding `n_turns` turns in total, cut from
/// simulated calls laid end to end (repeating as needed).
fn shaped(n_calls: usize, n_turns: usize) -> Vec<Conversation> {
    let pool: Vec<Turn> = simulated(100, 11)
        .into_iter()
        .flat_map(|c| c.turns)
        .cycle()
        .take(n_turns)
        .collect();
    let base = n_turns / n_calls;
    let extra = n_turns % n_calls;
    let mut next = 0;
    (0..n_calls)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let turns = pool[next..next + len]
                .iter()
                .enumerate()
                .map(|(k, t)| Turn {
                    turn_index: k as u32,
                    ..t.clone()
                })
                .collect();
            next += len;
            Conversation::new(format!("test-{i:04}"), turns)
        })
        .collect()
}

#[test]
fn test_split_shape_yields_400_records_and_11955_annotations() {
    let corpus = shaped(400, 11_955);
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("test.jsonl");
    write_transcripts(&input, &corpus).unwrap();
    let out = dir.path().join("out");
    let output = batch_annotate_file(&Engine::default(), &input, &out, &BatchOptions::default(), None).unwrap();
    assert_eq!(output.records.len(), 400);
    assert_eq!(output.annotations.len(), 11_955);
    let annotations: Vec<TurnResult> = read_jsonl(&out.join("annotations.jsonl")).unwrap();
    assert_eq!(annotations.len(), 11_955);
    assert!(annotations.iter().all(|a| a.annotation().is_some()));
    let records: Vec<serde_json::Value> = read_jsonl(&out.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 400);
    let manifest: BatchManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest.n_conversations, manifest.n_turns, manifest.n_annotated), (400, 11_955, 11_955));
    assert!(manifest.gaps.is_empty() && manifest.unrecorded.is_empty());
}

#[test]
fn empty_file_gives_empty_outputs_and_a_zero_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    std::fs::write(&input, "").unwrap();
    let out = dir.path().join("out");
    batch_annotate_file(&Engine::default(), &input, &out, &BatchOptions::default(), None).unwrap();
    assert_eq!(std::fs::read_to_string(out.join("annotations.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(out.join("records.jsonl")).unwrap(), "");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["n_conversations", "n_turns", "n_annotated", "n_failed", "n_records"] {
        assert_eq!(manifest[key], 0, "{key}");
    }
    assert_eq!(manifest["gaps"], serde_json::json!([]));
}

#[test]
fn unreadable_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let err = batch_annotate_file(&Engine::default(), &missing, dir.path(), &BatchOptions::default(), None);
    assert!(matches!(err, Err(BatchError::Input(_))));
    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "{\"conversation_id\": 3}\n").unwrap();
    let err = batch_annotate_file(&Engine::default(), &garbage, dir.path(), &BatchOptions::default(), None);
    assert!(matches!(err, Err(BatchError::Input(_))));
}

#[test]
fn auth_failure_leaves_a_manifest_of_gaps_and_a_rerun_resumes() {
    let corpus = simulated(2, 21);
    let n_turns: usize = corpus.iter().map(|c| c.turns.len()).sum();
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let options = BatchOptions {
        backend: "remote".into(),
        max_in_flight: 1,
        ..Default::default()
    };

    let mut engine = Engine::default();
    engine.register(Arc::new(Rigged {
        auth_after: Some(30),
        ..Rigged::new("remote")
    }));
    let cache = AnnotationCache::open(&cache_path).unwrap();
    let first = batch_annotate(&engine, &corpus, &options, Some(&cache)).unwrap();
    let m = &first.manifest;
    assert!(m.halted_after_auth_failure);
    assert_eq!(m.n_annotated, 30);
    assert_eq!(m.gaps.len(), n_turns - 30);
    assert_eq!(first.annotations.len(), n_turns);
    assert!(!m.unrecorded.is_empty());
    assert_eq!(m.n_records + m.unrecorded.len(), corpus.len());

    let healthy = Arc::new(Rigged::new("remote"));
    let mut engine = Engine::default();
    engine.register(healthy.clone());
    let cache = AnnotationCache::open(&cache_path).unwrap();
    assert_eq!(cache.len(), 30);
    let second = batch_annotate(&engine, &corpus, &options, Some(&cache)).unwrap();
    assert_eq!(healthy.calls(), n_turns - 30);
    assert!(second.manifest.gaps.is_empty());
    assert_eq!(second.records.len(), corpus.len());

    let reference = batch_annotate(&Engine::default(), &corpus, &BatchOptions::default(), None).unwrap();
    let statuses = |out: &[TurnResult]| out.iter().map(|r| r.status.clone()).collect::<Vec<_>>();
    assert_eq!(statuses(&second.annotations), statuses(&reference.annotations));
}

#[test]
fn worker_count_does_not_change_output() {
    let corpus = simulated(3, 4);
    let engine = Engine::default();
    let run = |n| {
        let options = BatchOptions {
            max_in_flight: n,
            ..Default::default()
        };
        let out = batch_annotate(&engine, &corpus, &options, None).unwrap();
        let statuses: Vec<_> = out.annotations.into_iter().map(|r| (r.request_fingerprint, r.status)).collect();
        (statuses, out.records, out.manifest)
    };
    let one = run(1);
    assert_eq!(run(7), one);
}
