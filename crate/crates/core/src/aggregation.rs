//! Call-level outcomes and business metrics from turn annotations.
//!
//! Slots resolve latest-non-null-wins. The final outcome comes from a
//! versioned rule table evaluated first-match-wins over facts about the
//! customer turns: which intents occur, whether a complete promise exists,
//! the last non-`other` intent within a stage, and the dominant intent among
//! a candidate set (highest count, ties to the latest occurrence).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::io::{self, ConfigError};
use crate::model::{
    CallStageLabel, Conversation, EmotionLabel, Money, SentimentLabel, SlotValues, Speaker,
    TurnAnnotation,
};
use crate::simulator::ScenarioType;

pub const DEFAULT_RULES_DOCUMENT: &str = include_str!("../data/outcome_rules.v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalOutcome {
    PaymentCommitted,
    Deferred,
    Refused,
    Disputed,
    Unresolved,
    WrongPerson,
}

impl FinalOutcome {
    pub const ALL: [FinalOutcome; 6] = [
        FinalOutcome::PaymentCommitted,
        FinalOutcome::Deferred,
        FinalOutcome::Refused,
        FinalOutcome::Disputed,
        FinalOutcome::Unresolved,
        FinalOutcome::WrongPerson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FinalOutcome::PaymentCommitted => "payment_committed",
            FinalOutcome::Deferred => "deferred",
            FinalOutcome::Refused => "refused",
            FinalOutcome::Disputed => "disputed",
            FinalOutcome::Unresolved => "unresolved",
            FinalOutcome::WrongPerson => "wrong_person",
        }
    }
}

impl fmt::Display for FinalOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome a simulated call of each scenario type must aggregate to.
pub fn expected_outcome(scenario: ScenarioType) -> FinalOutcome {
    match scenario {
        ScenarioType::Cooperative
        | ScenarioType::Negotiation
        | ScenarioType::PaymentCommitment => FinalOutcome::PaymentCommitted,
        ScenarioType::Resistance => FinalOutcome::Refused,
        ScenarioType::Deferment => FinalOutcome::Deferred,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCondition {
    pub stage: CallStageLabel,
    pub intents: Vec<String>,
}

/// All present fields must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub any_intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub promise_complete: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_intent_in_stage: Option<StageCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_intent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRule {
    pub id: String,
    pub when: Condition,
    pub outcome: FinalOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRules {
    pub version: String,
    pub dominance_candidates: Vec<String>,
    pub rules: Vec<OutcomeRule>,
    pub fallback: FinalOutcome,
}

impl Default for OutcomeRules {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_RULES_DOCUMENT).expect("shipped rule table is valid")
    }
}

impl OutcomeRules {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        io::load_config(path)
    }

    /// First matching rule's outcome and id, or the fallback.
    fn decide(&self, facts: &Facts) -> (FinalOutcome, Option<String>) {
        for rule in &self.rules {
            if facts.satisfies(&rule.when, &self.dominance_candidates) {
                return (rule.outcome, Some(rule.id.clone()));
            }
        }
        (self.fallback, None)
    }
}

/// Customer-turn facts the rule table reads.
struct Facts<'a> {
    customer: Vec<&'a TurnAnnotation>,
    promise_complete: bool,
}

impl Facts<'_> {
    fn last_intent_in_stage(&self, stage: CallStageLabel) -> Option<&str> {
        self.customer
            .iter()
            .rev()
            .filter(|a| a.call_stage == stage && a.intent.as_str() != "other")
            .map(|a| a.intent.as_str())
            .next()
    }

    fn dominant_intent(&self, candidates: &[String]) -> Option<&str> {
        // (count, last position) per candidate
        let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (position, annotation) in self.customer.iter().enumerate() {
            let intent = annotation.intent.as_str();
            if candidates.iter().any(|c| c == intent) {
                let entry = tally.entry(intent).or_default();
                entry.0 += 1;
                entry.1 = position;
            }
        }
        tally
            .into_iter()
            .max_by_key(|(_, (count, last))| (*count, *last))
            .map(|(intent, _)| intent)
    }

    fn satisfies(&self, condition: &Condition, candidates: &[String]) -> bool {
        if let Some(intent) = &condition.any_intent {
            if !self.customer.iter().any(|a| a.intent.as_str() == intent) {
                return false;
            }
        }
        if let Some(wanted) = condition.promise_complete {
            if self.promise_complete != wanted {
                return false;
            }
        }
        if let Some(stage) = &condition.last_intent_in_stage {
            match self.last_intent_in_stage(stage.stage) {
                Some(intent) if stage.intents.iter().any(|i| i == intent) => {}
                _ => return false,
            }
        }
        if let Some(intent) = &condition.dominant_intent {
            if self.dominant_intent(candidates) != Some(intent.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Promise {
    pub amount: Money,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePoint {
    pub turn_index: u32,
    pub call_stage: CallStageLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionPoint {
    pub turn_index: u32,
    pub emotion: EmotionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfrontationEvent {
    pub turn_index: u32,
    pub sentiment: SentimentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub conversation_id: String,
    pub final_outcome: FinalOutcome,
    /// Present exactly when the outcome is `payment_committed`.
    pub promise: Option<Promise>,
    pub stage_trace: Vec<StagePoint>,
    pub emotion_trace: Vec<EmotionPoint>,
    pub escalation_flag: bool,
    pub confrontation_events: Vec<ConfrontationEvent>,
    pub slot_summary: SlotValues,
    pub rules_version: String,
    /// Id of the rule that decided the outcome; absent for the fallback.
    pub decided_by: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("{annotations} annotations for {turns} turns")]
    LengthMismatch { turns: usize, annotations: usize },
}

/// True iff some i < j moves emotion from neutral/positive to negative and
/// an insult or threat occurs at or after j.
pub fn escalation(emotions: &[EmotionLabel], sentiments: &[SentimentLabel]) -> bool {
    let mut calm_seen = false;
    let mut first_turn = None;
    for (j, emotion) in emotions.iter().enumerate() {
        if *emotion == EmotionLabel::Negative && calm_seen {
            first_turn = Some(j);
            break;
        }
        calm_seen |= *emotion != EmotionLabel::Negative;
    }
    first_turn.is_some_and(|j| {
        sentiments[j..]
            .iter()
            .any(|s| matches!(s, SentimentLabel::Insult | SentimentLabel::Threat))
    })
}

#[derive(Debug, Clone, Default)]
pub struct Aggregator {
    rules: OutcomeRules,
}

impl Aggregator {
    pub fn new(rules: OutcomeRules) -> Self {
        Aggregator { rules }
    }

    pub fn rules(&self) -> &OutcomeRules {
        &self.rules
    }

    pub fn aggregate_call(
        &self,
        conv: &Conversation,
        annotations: &[TurnAnnotation],
    ) -> Result<CallRecord, AggregationError> {
        let wrapped: Vec<Option<&TurnAnnotation>> = annotations.iter().map(Some).collect();
        self.aggregate_partial(conv, &wrapped)
    }

    /// As [`Aggregator::aggregate_call`], with `None` for turns that have no
    /// annotation; those turns are left out of every trace.
    pub fn aggregate_partial(
        &self,
        conv: &Conversation,
        annotations: &[Option<&TurnAnnotation>],
    ) -> Result<CallRecord, AggregationError> {
        if annotations.len() != conv.turns.len() {
            return Err(AggregationError::LengthMismatch {
                turns: conv.turns.len(),
                annotations: annotations.len(),
            });
        }
        let annotated: Vec<(u32, Speaker, &TurnAnnotation)> = conv
            .turns
            .iter()
            .zip(annotations)
            .filter_map(|(turn, ann)| ann.map(|a| (turn.turn_index, turn.speaker, a)))
            .collect();

        let mut slot_summary = SlotValues::default();
        for (_, _, ann) in annotated.iter().rev() {
            slot_summary.fill_from(&ann.slots);
        }
        let facts = Facts {
            customer: annotated
                .iter()
                .filter(|(_, speaker, _)| *speaker == Speaker::Customer)
                .map(|(_, _, a)| *a)
                .collect(),
            promise_complete: slot_summary.promised_payment_amount.is_some()
                && slot_summary.promised_payment_date.is_some(),
        };
        let (final_outcome, decided_by) = self.rules.decide(&facts);
        let promise = match (
            final_outcome,
            &slot_summary.promised_payment_amount,
            slot_summary.promised_payment_date,
        ) {
            (FinalOutcome::PaymentCommitted, Some(amount), Some(date)) => Some(Promise {
                amount: amount.clone(),
                date,
            }),
            _ => None,
        };
        // a custom rule table may commit without a complete promise
        let final_outcome = if final_outcome == FinalOutcome::PaymentCommitted && promise.is_none() {
            self.rules.fallback
        } else {
            final_outcome
        };

        let emotions: Vec<EmotionLabel> = annotated.iter().map(|(_, _, a)| a.emotion).collect();
        let sentiments: Vec<SentimentLabel> = annotated.iter().map(|(_, _, a)| a.sentiment).collect();
        Ok(CallRecord {
            conversation_id: conv.conversation_id.clone(),
            final_outcome,
            promise,
            stage_trace: annotated
                .iter()
                .map(|(i, _, a)| StagePoint {
                    turn_index: *i,
                    call_stage: a.call_stage,
                })
                .collect(),
            emotion_trace: annotated
                .iter()
                .map(|(i, _, a)| EmotionPoint {
                    turn_index: *i,
                    emotion: a.emotion,
                })
                .collect(),
            escalation_flag: escalation(&emotions, &sentiments),
            confrontation_events: annotated
                .iter()
                .filter(|(_, _, a)| a.sentiment != SentimentLabel::None)
                .map(|(i, _, a)| ConfrontationEvent {
                    turn_index: *i,
                    sentiment: a.sentiment,
                })
                .collect(),
            slot_summary,
            rules_version: self.rules.version.clone(),
            decided_by,
        })
    }
}

pub fn aggregate_call(
    conv: &Conversation,
    annotations: &[TurnAnnotation],
) -> Result<CallRecord, AggregationError> {
    Aggregator::default().aggregate_call(conv, annotations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmountMean {
    pub count: u64,
    pub total_minor_units: i64,
}

impl AmountMean {
    pub fn mean(&self) -> f64 {
        self.total_minor_units as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessMetrics {
    pub n_calls: u64,
    pub promise_rate: Fraction,
    /// Per currency, over calls with a promise.
    pub promised_amounts: BTreeMap<String, AmountMean>,
    pub escalation_rate: Fraction,
    pub outcome_distribution: BTreeMap<FinalOutcome, Fraction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RollupSummary {
    Empty,
    Summary(BusinessMetrics),
}

pub fn corpus_rollup(records: &[CallRecord]) -> RollupSummary {
    let n = records.len() as u64;
    let Some(zero) = Fraction::new(0, n) else {
        return RollupSummary::Empty;
    };
    let rate = |count: usize| Fraction::new(count as u64, n).unwrap_or(zero);
    let mut promised_amounts: BTreeMap<String, AmountMean> = BTreeMap::new();
    for promise in records.iter().filter_map(|r| r.promise.as_ref()) {
        let entry = promised_amounts
            .entry(promise.amount.currency.as_str().to_string())
            .or_insert(AmountMean {
                count: 0,
                total_minor_units: 0,
            });
        entry.count += 1;
        entry.total_minor_units += promise.amount.minor_units;
    }
    RollupSummary::Summary(BusinessMetrics {
        n_calls: n,
        promise_rate: rate(records.iter().filter(|r| r.promise.is_some()).count()),
        promised_amounts,
        escalation_rate: rate(records.iter().filter(|r| r.escalation_flag).count()),
        outcome_distribution: FinalOutcome::ALL
            .iter()
            .map(|o| (*o, rate(records.iter().filter(|r| r.final_outcome == *o).count())))
            .collect(),
    })
}
