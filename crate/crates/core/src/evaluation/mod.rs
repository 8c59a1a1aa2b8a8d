//! Splits, corpus statistics, metrics and the evaluation harness.

pub mod harness;
pub mod metrics;
pub mod split;
pub mod stats;

pub use harness::{
    comparison_table, run_eval, score, AnnotationCache, EvalError, EvalReport, EvalRun, Evaluator, ReportContext,
    RunStats, TurnPrediction, EVAL_REPORT_VERSION,
};
pub use metrics::{
    classification_accuracy, cohen_kappa, entity_accuracy, entity_accuracy_for, macro_average, Kappa, MetricError,
    SlotScore,
};
pub use split::{split_corpus, split_indices, SplitError, SplitIndices, SplitSpec};
pub use stats::{corpus_stats, CorpusStats};
