//! Language packs: utterance templates with their gold labels.
//!
//! Placeholders: `{agent_name}`, `{customer_name}`, `{honorific}`,
//! `{Honorific}`, `{total_debt}`, `{days_past_due}`, `{due_date}`,
//! `{promised_amount}`, `{promised_date}`. A placeholder that names a slot
//! makes that slot part of the turn's gold annotation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioType;
use crate::io::{self, ConfigError};
use crate::model::{CallStageLabel, EmotionLabel, IntentLabel, SentimentLabel, SlotName};

pub const DEFAULT_PACK_DOCUMENT: &str = include_str!("../../data/language_pack.vi-default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomerTemplate {
    pub text: String,
    pub emotion: EmotionLabel,
    pub sentiment: SentimentLabel,
    pub intent: IntentLabel,
    /// Eligible only as the outcome-deciding customer turn of a call.
    #[serde(default)]
    pub decisive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomerProfile {
    pub name: String,
    pub honorific: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguagePack {
    pub id: String,
    /// Trailing filler words; fragment cuts only ever remove these.
    pub tails: Vec<String>,
    pub agent_names: Vec<String>,
    pub customers: Vec<CustomerProfile>,
    pub agent: BTreeMap<CallStageLabel, Vec<String>>,
    pub customer_common: BTreeMap<CallStageLabel, Vec<CustomerTemplate>>,
    #[serde(default)]
    pub customer: BTreeMap<ScenarioType, BTreeMap<CallStageLabel, Vec<CustomerTemplate>>>,
}

impl LanguagePack {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        io::load_config(path)
    }

    pub fn agent_templates(&self, stage: CallStageLabel) -> &[String] {
        self.agent.get(&stage).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Scenario-specific templates when the pack has them, common ones otherwise.
    pub fn customer_templates(
        &self,
        scenario: ScenarioType,
        stage: CallStageLabel,
    ) -> &[CustomerTemplate] {
        self.customer
            .get(&scenario)
            .and_then(|stages| stages.get(&stage))
            .or_else(|| self.customer_common.get(&stage))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

impl Default for LanguagePack {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PACK_DOCUMENT).expect("shipped language pack is valid")
    }
}

/// Slots named by the placeholders in `template`.
pub fn template_slots(template: &str) -> Vec<SlotName> {
    let mut out = Vec::new();
    for (placeholder, slot) in [
        ("{agent_name}", SlotName::AgentName),
        ("{customer_name}", SlotName::CustomerName),
        ("{total_debt}", SlotName::TotalDebt),
        ("{days_past_due}", SlotName::DaysPastDue),
        ("{promised_date}", SlotName::PromisedPaymentDate),
        ("{promised_amount}", SlotName::PromisedPaymentAmount),
        ("{due_date}", SlotName::DueDate),
    ] {
        if template.contains(placeholder) {
            out.push(slot);
        }
    }
    out
}

pub fn mentions_promise(template: &str) -> bool {
    template.contains("{promised_amount}") || template.contains("{promised_date}")
}
