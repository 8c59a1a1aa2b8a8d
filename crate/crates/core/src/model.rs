//! Domain vocabulary: conversations, turns, label taxonomies and the slot set.
//!
//! Every value here is immutable once built. Structural checks live in
//! [`validate_conversation`] and [`validate_annotation`]; they report
//! violations as data and never fail.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::taxonomy::IntentTaxonomy;

/// Who produced a turn. Transcripts never contain a third party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent,
    Customer,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Agent => "agent",
            Speaker::Customer => "customer",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! closed_label {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(UnknownLabel {
                        kind: stringify!($name),
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

/// Returned when a string is not a member of a closed label set.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} label {value:?}")]
pub struct UnknownLabel {
    pub kind: &'static str,
    pub value: String,
}

closed_label!(
    /// Customer affective state.
    EmotionLabel {
        Neutral => "neutral",
        Negative => "negative",
        Positive => "positive",
    }
);

closed_label!(
    /// Form of confrontational behaviour in a turn. `None` is the common case.
    SentimentLabel {
        None => "none",
        Refusal => "refusal",
        Insult => "insult",
        Threat => "threat",
    }
);

closed_label!(
    /// Coarse phase of a collection call, in script order.
    CallStageLabel {
        Opening => "opening",
        Verification => "verification",
        Negotiation => "negotiation",
        Commitment => "commitment",
        Closure => "closure",
    }
);

#[allow(clippy::derivable_impls)]
impl Default for EmotionLabel {
    fn default() -> Self {
        EmotionLabel::Neutral
    }
}

#[allow(clippy::derivable_impls)]
impl Default for SentimentLabel {
    fn default() -> Self {
        SentimentLabel::None
    }
}

#[allow(clippy::derivable_impls)]
impl Default for CallStageLabel {
    fn default() -> Self {
        CallStageLabel::Opening
    }
}

/// Intent label. Membership is checked against the active [`IntentTaxonomy`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentLabel(String);

impl IntentLabel {
    pub fn new(value: impl Into<String>) -> Self {
        IntentLabel(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for IntentLabel {
    fn from(value: &str) -> Self {
        IntentLabel::new(value)
    }
}

/// ISO-4217 currency code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Currency(String);

impl Currency {
    pub fn new(code: impl Into<String>) -> Self {
        Currency(code.into())
    }

    pub fn vnd() -> Self {
        Currency("VND".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 3 && self.0.bytes().all(|b| b.is_ascii_uppercase())
    }
}

impl Default for Currency {
    fn default() -> Self {
        Currency::vnd()
    }
}

/// Amount in integer minor units of `currency`. VND has no minor unit, so one
/// unit is one dong.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Money {
    pub currency: Currency,
    pub minor_units: i64,
}

impl Money {
    pub fn vnd(minor_units: i64) -> Self {
        Money {
            currency: Currency::vnd(),
            minor_units,
        }
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.minor_units, self.currency.as_str())
    }
}

/// The seven business entities extracted per turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotName {
    AgentName,
    CustomerName,
    TotalDebt,
    DaysPastDue,
    PromisedPaymentDate,
    PromisedPaymentAmount,
    DueDate,
}

impl SlotName {
    pub const ALL: [SlotName; 7] = [
        SlotName::AgentName,
        SlotName::CustomerName,
        SlotName::TotalDebt,
        SlotName::DaysPastDue,
        SlotName::PromisedPaymentDate,
        SlotName::PromisedPaymentAmount,
        SlotName::DueDate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotName::AgentName => "agent_name",
            SlotName::CustomerName => "customer_name",
            SlotName::TotalDebt => "total_debt",
            SlotName::DaysPastDue => "days_past_due",
            SlotName::PromisedPaymentDate => "promised_payment_date",
            SlotName::PromisedPaymentAmount => "promised_payment_amount",
            SlotName::DueDate => "due_date",
        }
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotName {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotName::ALL
            .into_iter()
            .find(|slot| slot.as_str() == s)
            .ok_or_else(|| UnknownLabel {
                kind: "SlotName",
                value: s.to_string(),
            })
    }
}

/// A single slot value, typed by slot kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotValue {
    Name(String),
    Amount(Money),
    Days(u32),
    Date(NaiveDate),
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotValue::Name(name) => f.write_str(name),
            SlotValue::Amount(money) => money.fmt(f),
            SlotValue::Days(days) => days.fmt(f),
            SlotValue::Date(date) => write!(f, "{}", date.format("%Y-%m-%d")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotValues {
    pub agent_name: Option<String>,
    pub customer_name: Option<String>,
    pub total_debt: Option<Money>,
    pub days_past_due: Option<u32>,
    pub promised_payment_date: Option<NaiveDate>,
    pub promised_payment_amount: Option<Money>,
    pub due_date: Option<NaiveDate>,
}

impl SlotValues {
    pub fn is_empty(&self) -> bool {
        SlotName::ALL.iter().all(|slot| self.get(*slot).is_none())
    }

    pub fn get(&self, slot: SlotName) -> Option<SlotValue> {
        match slot {
            SlotName::AgentName => self.agent_name.clone().map(SlotValue::Name),
            SlotName::CustomerName => self.customer_name.clone().map(SlotValue::Name),
            SlotName::TotalDebt => self.total_debt.clone().map(SlotValue::Amount),
            SlotName::DaysPastDue => self.days_past_due.map(SlotValue::Days),
            SlotName::PromisedPaymentDate => self.promised_payment_date.map(SlotValue::Date),
            SlotName::PromisedPaymentAmount => {
                self.promised_payment_amount.clone().map(SlotValue::Amount)
            }
            SlotName::DueDate => self.due_date.map(SlotValue::Date),
        }
    }

    /// Fills every slot that is null in `self` from `other`.
    pub fn fill_from(&mut self, other: &SlotValues) {
        self.agent_name = self.agent_name.take().or_else(|| other.agent_name.clone());
        self.customer_name = self
            .customer_name
            .take()
            .or_else(|| other.customer_name.clone());
        self.total_debt = self.total_debt.take().or_else(|| other.total_debt.clone());
        self.days_past_due = self.days_past_due.or(other.days_past_due);
        self.promised_payment_date = self.promised_payment_date.or(other.promised_payment_date);
        self.promised_payment_amount = self
            .promised_payment_amount
            .take()
            .or_else(|| other.promised_payment_amount.clone());
        self.due_date = self.due_date.or(other.due_date);
    }
}

/// The five-task structured output for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnAnnotation {
    pub emotion: EmotionLabel,
    pub sentiment: SentimentLabel,
    pub intent: IntentLabel,
    pub call_stage: CallStageLabel,
    pub slots: SlotValues,
}

impl TurnAnnotation {
    /// neutral / none / other / opening with empty slots.
    pub fn default_for_unmatched() -> Self {
        TurnAnnotation {
            emotion: EmotionLabel::Neutral,
            sentiment: SentimentLabel::None,
            intent: IntentLabel::new("other"),
            call_stage: CallStageLabel::Opening,
            slots: SlotValues::default(),
        }
    }

    pub fn label(&self, task: Task) -> &str {
        match task {
            Task::Emotion => self.emotion.as_str(),
            Task::Sentiment => self.sentiment.as_str(),
            Task::Intent => self.intent.as_str(),
            Task::CallStage => self.call_stage.as_str(),
        }
    }
}

/// The four classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Emotion,
    Sentiment,
    Intent,
    CallStage,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Emotion, Task::Sentiment, Task::Intent, Task::CallStage];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Emotion => "emotion",
            Task::Sentiment => "sentiment",
            Task::Intent => "intent",
            Task::CallStage => "call_stage",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|task| task.as_str() == s)
            .ok_or_else(|| UnknownLabel {
                kind: "Task",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: u32,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<TurnAnnotation>,
}

impl Turn {
    pub fn new(turn_index: u32, speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            turn_index,
            speaker,
            text: text.into(),
            start_ms: None,
            end_ms: None,
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: TurnAnnotation) -> Self {
        self.gold = Some(gold);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Metadata key holding the call date (ISO-8601) used to resolve partial dates.
pub const META_CALL_DATE: &str = "call_date";
pub const META_SCENARIO: &str = "scenario";
pub const META_SOURCE: &str = "source";
pub const META_LANGUAGE: &str = "language";

impl Conversation {
    pub fn new(conversation_id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Conversation {
            conversation_id: conversation_id.into(),
            turns,
            metadata: BTreeMap::new(),
        }
    }

    pub fn call_date(&self) -> Option<NaiveDate> {
        self.metadata
            .get(META_CALL_DATE)
            .and_then(|raw| NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok())
    }

    pub fn has_full_gold(&self) -> bool {
        self.turns.iter().all(|turn| turn.gold.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnotationViolation {
    UnknownIntent(String),
    NonPositiveAmount(SlotName),
    MalformedCurrency(SlotName),
    BlankName(SlotName),
}

impl fmt::Display for AnnotationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationViolation::UnknownIntent(label) => {
                write!(f, "intent {label:?} not in active taxonomy")
            }
            AnnotationViolation::NonPositiveAmount(slot) => {
                write!(f, "{slot} amount must be strictly positive")
            }
            AnnotationViolation::MalformedCurrency(slot) => {
                write!(f, "{slot} currency must be a 3-letter ISO-4217 code")
            }
            AnnotationViolation::BlankName(slot) => write!(f, "{slot} must not be blank"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyConversation,
    BlankConversationId,
    NonDenseTurnIndex { position: usize, found: u32 },
    BlankText { position: usize },
    InvertedTimestamps { position: usize },
    Annotation {
        position: usize,
        violation: AnnotationViolation,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyConversation => f.write_str("empty conversation"),
            Violation::BlankConversationId => f.write_str("blank conversation_id"),
            Violation::NonDenseTurnIndex { position, .. } => {
                write!(f, "non-dense turn_index at position {position}")
            }
            Violation::BlankText { position } => {
                write!(f, "blank text at position {position}")
            }
            Violation::InvertedTimestamps { position } => {
                write!(f, "end_ms precedes start_ms at position {position}")
            }
            Violation::Annotation {
                position,
                violation,
            } => write!(f, "gold annotation at position {position}: {violation}"),
        }
    }
}

pub fn validate_annotation(
    annotation: &TurnAnnotation,
    taxonomy: &IntentTaxonomy,
) -> Vec<AnnotationViolation> {
    let mut out = Vec::new();
    if !taxonomy.contains(annotation.intent.as_str()) {
        out.push(AnnotationViolation::UnknownIntent(
            annotation.intent.as_str().to_string(),
        ));
    }
    let slots = &annotation.slots;
    for (slot, name) in [
        (SlotName::AgentName, &slots.agent_name),
        (SlotName::CustomerName, &slots.customer_name),
    ] {
        if name.as_deref().is_some_and(|n| n.trim().is_empty()) {
            out.push(AnnotationViolation::BlankName(slot));
        }
    }
    for (slot, money) in [
        (SlotName::TotalDebt, &slots.total_debt),
        (SlotName::PromisedPaymentAmount, &slots.promised_payment_amount),
    ] {
        if let Some(money) = money {
            if money.minor_units <= 0 {
                out.push(AnnotationViolation::NonPositiveAmount(slot));
            }
            if !money.currency.is_well_formed() {
                out.push(AnnotationViolation::MalformedCurrency(slot));
            }
        }
    }
    out
}

/// Checks every structural invariant of a conversation, including the gold
/// annotations it carries. An empty result means the conversation is valid.
pub fn validate_conversation(conv: &Conversation, taxonomy: &IntentTaxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    if conv.conversation_id.trim().is_empty() {
        out.push(Violation::BlankConversationId);
    }
    if conv.turns.is_empty() {
        out.push(Violation::EmptyConversation);
        return out;
    }
    for (position, turn) in conv.turns.iter().enumerate() {
        if turn.turn_index as usize != position {
            out.push(Violation::NonDenseTurnIndex {
                position,
                found: turn.turn_index,
            });
        }
        if turn.text.trim().is_empty() {
            out.push(Violation::BlankText { position });
        }
        if let (Some(start), Some(end)) = (turn.start_ms, turn.end_ms) {
            if end < start {
                out.push(Violation::InvertedTimestamps { position });
            }
        }
        if let Some(gold) = &turn.gold {
            out.extend(
                validate_annotation(gold, taxonomy)
                    .into_iter()
                    .map(|violation| Violation::Annotation {
                        position,
                        violation,
                    }),
            );
        }
    }
    out
}

/// A maximal run of consecutive turns sharing one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment<L> {
    pub first_turn: u32,
    pub last_turn: u32,
    pub label: L,
}

/// Derives segment-level labels from turn-level ones. Segments are never
/// stored; they are recomputed from the turn sequence on demand.
pub fn segments<L, I>(labels: I) -> Vec<Segment<L>>
where
    L: PartialEq,
    I: IntoIterator<Item = (u32, L)>,
{
    let mut out: Vec<Segment<L>> = Vec::new();
    for (turn_index, label) in labels {
        match out.last_mut() {
            Some(last) if last.label == label && last.last_turn + 1 == turn_index => {
                last.last_turn = turn_index;
            }
            _ => out.push(Segment {
                first_turn: turn_index,
                last_turn: turn_index,
                label,
            }),
        }
    }
    out
}
