//! Template-based simulation of collection calls with embedded gold labels.
//!
//! A call is fully described by `(Scenario, NoiseProfile, seed)`. Gold
//! annotations are taken from the templates, so they are correct by
//! construction; noise is applied to the surface text afterwards and never
//! touches the gold.

pub mod noise;
pub mod pack;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    CallStageLabel, Conversation, EmotionLabel, IntentLabel, Money, SentimentLabel, SlotName,
    SlotValues, Speaker, Turn, TurnAnnotation, META_CALL_DATE, META_LANGUAGE, META_SCENARIO,
    META_SOURCE,
};

pub use noise::{inject_noise, NoiseProfile};
pub use pack::{CustomerTemplate, LanguagePack};

pub const META_LANGUAGE_PACK: &str = "language_pack";
pub const META_SEED: &str = "seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioType {
    Cooperative,
    Resistance,
    Negotiation,
    Deferment,
    PaymentCommitment,
}

impl ScenarioType {
    pub const ALL: [ScenarioType; 5] = [
        ScenarioType::Cooperative,
        ScenarioType::Resistance,
        ScenarioType::Negotiation,
        ScenarioType::Deferment,
        ScenarioType::PaymentCommitment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioType::Cooperative => "cooperative",
            ScenarioType::Resistance => "resistance",
            ScenarioType::Negotiation => "negotiation",
            ScenarioType::Deferment => "deferment",
            ScenarioType::PaymentCommitment => "payment_commitment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ScenarioType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Stage whose last customer turn settles the call.
    pub fn decisive_stage(self) -> CallStageLabel {
        match self {
            ScenarioType::Resistance | ScenarioType::Deferment => CallStageLabel::Negotiation,
            _ => CallStageLabel::Commitment,
        }
    }

    pub fn ends_in_promise(self) -> bool {
        self.decisive_stage() == CallStageLabel::Commitment
    }

    /// Default stage scripts. Each averages 19.5 turns per call.
    pub fn default_script(self) -> Vec<StageStep> {
        use CallStageLabel::*;
        let steps: &[(CallStageLabel, u32, u32)] = match self {
            ScenarioType::Cooperative => &[
                (Opening, 2, 3),
                (Verification, 2, 4),
                (Negotiation, 6, 10),
                (Commitment, 3, 5),
                (Closure, 2, 2),
            ],
            ScenarioType::Resistance => &[
                (Opening, 2, 3),
                (Verification, 2, 4),
                (Negotiation, 10, 16),
                (Closure, 1, 1),
            ],
            ScenarioType::Negotiation => &[
                (Opening, 2, 2),
                (Verification, 2, 3),
                (Negotiation, 8, 14),
                (Commitment, 2, 4),
                (Closure, 1, 1),
            ],
            ScenarioType::Deferment => &[
                (Opening, 2, 3),
                (Verification, 2, 4),
                (Negotiation, 10, 14),
                (Closure, 2, 2),
            ],
            ScenarioType::PaymentCommitment => &[
                (Opening, 2, 3),
                (Verification, 2, 4),
                (Negotiation, 4, 6),
                (Commitment, 5, 9),
                (Closure, 2, 2),
            ],
        };
        steps
            .iter()
            .map(|&(stage, min_turns, max_turns)| StageStep {
                stage,
                min_turns,
                max_turns,
            })
            .collect()
    }
}

impl fmt::Display for ScenarioType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageStep {
    pub stage: CallStageLabel,
    pub min_turns: u32,
    pub max_turns: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub customer_name: String,
    /// Form of address used by the agent ("anh", "chị").
    pub honorific: String,
    pub total_debt: Money,
    pub days_past_due: u32,
    pub due_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_type: ScenarioType,
    pub persona: Persona,
    pub agent_name: String,
    pub call_date: NaiveDate,
    pub stage_script: Vec<StageStep>,
    pub language_pack: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("stage script is empty")]
    EmptyScript,
    #[error("stage script must begin with opening, found {0}")]
    MustOpen(CallStageLabel),
    #[error("stage step {index} has invalid turn bounds {min}..={max}")]
    BadBounds { index: usize, min: u32, max: u32 },
    #[error("{scenario} scenarios need a {stage} step with at least 2 turns")]
    NoDecisiveStep {
        scenario: ScenarioType,
        stage: CallStageLabel,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GenerateError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Noise(#[from] noise::NoiseRateError),
    #[error("scenario wants language pack {wanted:?} but {loaded:?} is loaded")]
    PackMismatch { wanted: String, loaded: String },
    #[error("language pack {pack:?} has no {role} templates for {scenario}/{stage}")]
    MissingTemplates {
        pack: String,
        role: &'static str,
        scenario: ScenarioType,
        stage: CallStageLabel,
    },
    #[error("language pack {0:?} has no names to draw personas from")]
    NoNames(String),
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let first = self.stage_script.first().ok_or(ScenarioError::EmptyScript)?;
        if first.stage != CallStageLabel::Opening {
            return Err(ScenarioError::MustOpen(first.stage));
        }
        for (index, step) in self.stage_script.iter().enumerate() {
            if step.min_turns < 1 || step.min_turns > step.max_turns {
                return Err(ScenarioError::BadBounds {
                    index,
                    min: step.min_turns,
                    max: step.max_turns,
                });
            }
        }
        let decisive = self.scenario_type.decisive_stage();
        let ok = self
            .stage_script
            .iter()
            .rev()
            .find(|step| step.stage == decisive)
            .is_some_and(|step| step.min_turns >= 2);
        if !ok {
            return Err(ScenarioError::NoDecisiveStep {
                scenario: self.scenario_type,
                stage: decisive,
            });
        }
        Ok(())
    }

    /// Draws a persona for `scenario_type` from the pack's name lists.
    pub fn sample(
        scenario_type: ScenarioType,
        stage_script: Vec<StageStep>,
        pack: &LanguagePack,
        seed: u64,
    ) -> Result<Scenario, GenerateError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_a210_7e55_0001);
        let customer = pack
            .customers
            .choose(&mut rng)
            .ok_or_else(|| GenerateError::NoNames(pack.id.clone()))?;
        let agent_name = pack
            .agent_names
            .choose(&mut rng)
            .ok_or_else(|| GenerateError::NoNames(pack.id.clone()))?;
        let base = NaiveDate::from_ymd_opt(2025, 1, 6).expect("valid date");
        let call_date = base + Duration::days(rng.random_range(0..=298));
        let days_past_due = rng.random_range(5..=120);
        let total_debt = Money::vnd(rng.random_range(30..=500) * 100_000);
        Ok(Scenario {
            scenario_type,
            persona: Persona {
                customer_name: customer.name.clone(),
                honorific: customer.honorific.clone(),
                total_debt,
                days_past_due,
                due_date: call_date - Duration::days(i64::from(days_past_due)),
            },
            agent_name: agent_name.clone(),
            call_date,
            stage_script,
            language_pack: pack.id.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedCall {
    pub conversation: Conversation,
    pub scenario: Scenario,
    pub seed: u64,
}

/// Promise made in a call; values are drawn per call, not from the persona.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Promise {
    amount: Money,
    date: NaiveDate,
}

/// `15000000` → `15.000.000`.
pub fn format_amount(minor_units: i64) -> String {
    let digits = minor_units.abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push('.');
        }
        out.push(ch);
    }
    if minor_units < 0 {
        out.insert(0, '-');
    }
    out
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct RenderContext<'a> {
    scenario: &'a Scenario,
    promise: &'a Promise,
}

impl RenderContext<'_> {
    fn render(&self, template: &str) -> String {
        let persona = &self.scenario.persona;
        template
            .replace("{agent_name}", &self.scenario.agent_name)
            .replace("{customer_name}", &persona.customer_name)
            .replace("{Honorific}", &capitalize(&persona.honorific))
            .replace("{honorific}", &persona.honorific)
            .replace("{total_debt}", &format_amount(persona.total_debt.minor_units))
            .replace("{days_past_due}", &persona.days_past_due.to_string())
            .replace("{due_date}", &persona.due_date.format("%d/%m/%Y").to_string())
            .replace("{promised_amount}", &format_amount(self.promise.amount.minor_units))
            .replace("{promised_date}", &self.promise.date.format("%d/%m").to_string())
    }

    fn gold_slots(&self, template: &str) -> SlotValues {
        let persona = &self.scenario.persona;
        let mut slots = SlotValues::default();
        for slot in pack::template_slots(template) {
            match slot {
                SlotName::AgentName => slots.agent_name = Some(self.scenario.agent_name.clone()),
                SlotName::CustomerName => {
                    slots.customer_name = Some(persona.customer_name.clone())
                }
                SlotName::TotalDebt => slots.total_debt = Some(persona.total_debt.clone()),
                SlotName::DaysPastDue => slots.days_past_due = Some(persona.days_past_due),
                SlotName::DueDate => slots.due_date = Some(persona.due_date),
                SlotName::PromisedPaymentDate => {
                    slots.promised_payment_date = Some(self.promise.date)
                }
                SlotName::PromisedPaymentAmount => {
                    slots.promised_payment_amount = Some(self.promise.amount.clone())
                }
            }
        }
        slots
    }
}

struct Draft {
    speaker: Speaker,
    core: String,
    tail: Option<String>,
    gold: TurnAnnotation,
}

/// Generates calls from one language pack.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    pack: LanguagePack,
}

impl Simulator {
    pub fn new(pack: LanguagePack) -> Self {
        Simulator { pack }
    }

    pub fn pack(&self) -> &LanguagePack {
        &self.pack
    }

    pub fn generate(
        &self,
        scenario: &Scenario,
        noise: &NoiseProfile,
        seed: u64,
    ) -> Result<SimulatedCall, GenerateError> {
        scenario.validate()?;
        noise.validate()?;
        if scenario.language_pack != self.pack.id {
            return Err(GenerateError::PackMismatch {
                wanted: scenario.language_pack.clone(),
                loaded: self.pack.id.clone(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let promise = self.draw_promise(scenario, &mut rng);
        let ctx = RenderContext {
            scenario,
            promise: &promise,
        };
        let drafts = self.draft_turns(scenario, &ctx, &mut rng)?;
        let turns = self.realize(drafts, noise, &mut rng);

        let mut conversation = Conversation::new(format!("sim-{seed:016x}"), turns);
        let meta = &mut conversation.metadata;
        meta.insert(META_SCENARIO.into(), scenario.scenario_type.as_str().into());
        meta.insert(META_SOURCE.into(), "simulator".into());
        meta.insert(META_LANGUAGE.into(), "vi".into());
        meta.insert(META_LANGUAGE_PACK.into(), self.pack.id.clone());
        meta.insert(META_CALL_DATE.into(), scenario.call_date.format("%Y-%m-%d").to_string());
        meta.insert(META_SEED.into(), seed.to_string());
        Ok(SimulatedCall {
            conversation,
            scenario: scenario.clone(),
            seed,
        })
    }

    fn draw_promise(&self, scenario: &Scenario, rng: &mut ChaCha8Rng) -> Promise {
        let debt = scenario.persona.total_debt.minor_units;
        let half = ((debt / 2) / 100_000).max(1) * 100_000;
        let options = [debt, half, 1_000_000.min(debt)];
        let amount = options[rng.random_range(0..options.len())];
        Promise {
            amount: Money {
                currency: scenario.persona.total_debt.currency.clone(),
                minor_units: amount,
            },
            date: scenario.call_date + Duration::days(rng.random_range(1..=20)),
        }
    }

    fn draft_turns(
        &self,
        scenario: &Scenario,
        ctx: &RenderContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, GenerateError> {
        let kind = scenario.scenario_type;
        let decisive_stage = kind.decisive_stage();
        let decisive_step = scenario
            .stage_script
            .iter()
            .rposition(|step| step.stage == decisive_stage)
            .expect("validated scenario has a decisive step");

        let missing = |role: &'static str, stage: CallStageLabel| GenerateError::MissingTemplates {
            pack: self.pack.id.clone(),
            role,
            scenario: kind,
            stage,
        };

        let mut drafts = Vec::new();
        let mut promise_stated = false;
        for (step_index, step) in scenario.stage_script.iter().enumerate() {
            let count = rng.random_range(step.min_turns..=step.max_turns) as usize;
            // turns alternate agent/customer, agent first
            let last_customer = if count >= 2 { Some((count - 2) | 1) } else { None };
            for position in 0..count {
                if position % 2 == 0 {
                    let eligible: Vec<&String> = self
                        .pack
                        .agent_templates(step.stage)
                        .iter()
                        .filter(|t| promise_stated || !pack::mentions_promise(t))
                        .collect();
                    let template = *eligible
                        .choose(rng)
                        .ok_or_else(|| missing("agent", step.stage))?;
                    drafts.push(Draft {
                        speaker: Speaker::Agent,
                        core: ctx.render(template),
                        tail: None,
                        gold: TurnAnnotation {
                            emotion: EmotionLabel::Neutral,
                            sentiment: SentimentLabel::None,
                            intent: IntentLabel::new("other"),
                            call_stage: step.stage,
                            slots: ctx.gold_slots(template),
                        },
                    });
                } else {
                    let decisive = step_index == decisive_step && Some(position) == last_customer;
                    let eligible: Vec<&CustomerTemplate> = self
                        .pack
                        .customer_templates(kind, step.stage)
                        .iter()
                        .filter(|t| t.decisive == decisive)
                        .filter(|t| decisive || !pack::mentions_promise(&t.text))
                        .collect();
                    let template = *eligible.choose(rng).ok_or_else(|| {
                        missing(if decisive { "decisive customer" } else { "customer" }, step.stage)
                    })?;
                    if decisive && kind.ends_in_promise() {
                        promise_stated = true;
                    }
                    drafts.push(Draft {
                        speaker: Speaker::Customer,
                        core: ctx.render(&template.text),
                        tail: None,
                        gold: TurnAnnotation {
                            emotion: template.emotion,
                            sentiment: template.sentiment,
                            intent: template.intent.clone(),
                            call_stage: step.stage,
                            slots: ctx.gold_slots(&template.text),
                        },
                    });
                }
                let draft = drafts.last_mut().expect("just pushed");
                draft.tail = self.pick_tail(&draft.core, rng);
            }
        }
        Ok(drafts)
    }

    fn pick_tail(&self, core: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        if self.pack.tails.is_empty() || !rng.random_bool(0.6) {
            return None;
        }
        let tail = self.pack.tails.choose(rng)?;
        let last = core
            .split_whitespace()
            .last()
            .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase());
        let first = tail.split_whitespace().next().map(str::to_lowercase);
        (last != first).then(|| tail.clone())
    }

    fn realize(&self, drafts: Vec<Draft>, noise: &NoiseProfile, rng: &mut ChaCha8Rng) -> Vec<Turn> {
        let mut texts: Vec<String> = drafts
            .iter()
            .map(|d| {
                let clean = match &d.tail {
                    Some(tail) => format!("{} {}", d.core, tail),
                    None => d.core.clone(),
                };
                let protected = d.core.split_whitespace().count();
                let profile = match d.speaker {
                    Speaker::Customer => *noise,
                    Speaker::Agent => noise.without_disfluency(),
                };
                noise::inject_noise_protected(&clean, protected, &profile, rng)
            })
            .collect();

        let mut overlaps = vec![false; drafts.len()];
        for i in 0..drafts.len().saturating_sub(1) {
            if rng.random_bool(noise.overlap_rate) {
                overlaps[i] = true;
                let span = noise::overlap_span(&drafts[i + 1].core);
                texts[i].push(' ');
                texts[i].push_str(&span);
            }
        }

        let mut clock: u64 = 0;
        let mut turns = Vec::with_capacity(drafts.len());
        for (i, (draft, text)) in drafts.into_iter().zip(texts).enumerate() {
            let duration = 400 + 55 * text.chars().count() as u64;
            let start = clock;
            let end = start + duration;
            clock = if overlaps[i] { end.saturating_sub(400).max(start) } else { end + 300 };
            turns.push(Turn {
                turn_index: i as u32,
                speaker: draft.speaker,
                text,
                start_ms: Some(start),
                end_ms: Some(end),
                gold: Some(draft.gold),
            });
        }
        turns
    }

    pub fn generate_corpus(
        &self,
        config: &CorpusConfig,
        noise: &NoiseProfile,
        base_seed: u64,
    ) -> Result<Vec<SimulatedCall>, GenerateError> {
        let mut out = Vec::with_capacity(config.total());
        for (ordinal, kind) in config.ordinal_types().enumerate() {
            let seed = base_seed.wrapping_add(ordinal as u64);
            let scenario = Scenario::sample(kind, config.script_for(kind), &self.pack, seed)?;
            out.push(self.generate(&scenario, noise, seed)?);
        }
        Ok(out)
    }
}

/// Generates one call with the shipped language pack.
pub fn generate(
    scenario: &Scenario,
    noise: &NoiseProfile,
    seed: u64,
) -> Result<SimulatedCall, GenerateError> {
    Simulator::default().generate(scenario, noise, seed)
}

/// Corpus composition: calls per scenario type plus optional script overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub counts: BTreeMap<ScenarioType, usize>,
    #[serde(default)]
    pub stage_scripts: BTreeMap<ScenarioType, Vec<StageStep>>,
}

impl CorpusConfig {
    pub fn uniform(per_type: usize) -> Self {
        CorpusConfig {
            counts: ScenarioType::ALL.iter().map(|t| (*t, per_type)).collect(),
            stage_scripts: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn script_for(&self, kind: ScenarioType) -> Vec<StageStep> {
        self.stage_scripts
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| kind.default_script())
    }

    /// Scenario type of every ordinal, types in declaration order.
    pub fn ordinal_types(&self) -> impl Iterator<Item = ScenarioType> + '_ {
        ScenarioType::ALL
            .into_iter()
            .flat_map(|kind| std::iter::repeat_n(kind, self.counts.get(&kind).copied().unwrap_or(0)))
    }
}

pub fn generate_corpus(
    config: &CorpusConfig,
    noise: &NoiseProfile,
    base_seed: u64,
) -> Result<Vec<SimulatedCall>, GenerateError> {
    Simulator::default().generate_corpus(config, noise, base_seed)
}

/// Lists every gold slot that disagrees with the persona it encodes.
pub fn gold_inconsistencies(call: &SimulatedCall) -> Vec<String> {
    let scenario = &call.scenario;
    let persona = &scenario.persona;
    let mut out = Vec::new();
    for turn in &call.conversation.turns {
        let Some(gold) = &turn.gold else {
            out.push(format!("turn {} has no gold", turn.turn_index));
            continue;
        };
        let s = &gold.slots;
        let mut check = |ok: bool, slot: SlotName| {
            if !ok {
                out.push(format!("turn {}: {slot} disagrees with persona", turn.turn_index));
            }
        };
        check(s.agent_name.as_ref().is_none_or(|v| *v == scenario.agent_name), SlotName::AgentName);
        check(
            s.customer_name.as_ref().is_none_or(|v| *v == persona.customer_name),
            SlotName::CustomerName,
        );
        check(s.total_debt.as_ref().is_none_or(|v| *v == persona.total_debt), SlotName::TotalDebt);
        check(
            s.days_past_due.is_none_or(|v| v == persona.days_past_due),
            SlotName::DaysPastDue,
        );
        check(s.due_date.is_none_or(|v| v == persona.due_date), SlotName::DueDate);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_conversation;
    use crate::taxonomy::IntentTaxonomy;

    fn scenario(kind: ScenarioType, seed: u64) -> Scenario {
        Scenario::sample(kind, kind.default_script(), &LanguagePack::default(), seed).unwrap()
    }

    #[test]
    fn amounts_use_dotted_thousands() {
        assert_eq!(format_amount(15_000_000), "15.000.000");
        assert_eq!(format_amount(500_000), "500.000");
        assert_eq!(format_amount(999), "999");
    }

    #[test]
    fn generation_is_deterministic() {
        let s = scenario(ScenarioType::Negotiation, 42);
        let a = generate(&s, &NoiseProfile::moderate(), 42).unwrap();
        let b = generate(&s, &NoiseProfile::moderate(), 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn generated_calls_validate_and_carry_gold() {
        let taxonomy = IntentTaxonomy::default();
        for (i, kind) in ScenarioType::ALL.into_iter().enumerate() {
            for seed in 0..20u64 {
                let seed = seed * 10 + i as u64;
                let call = generate(&scenario(kind, seed), &NoiseProfile::moderate(), seed).unwrap();
                assert!(validate_conversation(&call.conversation, &taxonomy).is_empty());
                assert!(call.conversation.has_full_gold());
                assert!(gold_inconsistencies(&call).is_empty());
            }
        }
    }

    #[test]
    fn zero_noise_leaves_no_markers() {
        for kind in ScenarioType::ALL {
            for seed in 0..20 {
                let call = generate(&scenario(kind, seed), &NoiseProfile::none(), seed).unwrap();
                for turn in &call.conversation.turns {
                    assert!(!noise::has_any_marker(&turn.text), "{}", turn.text);
                }
            }
        }
    }

    #[test]
    fn full_disfluency_marks_every_customer_turn() {
        let profile = NoiseProfile {
            disfluency_rate: 1.0,
            ..NoiseProfile::none()
        };
        for kind in ScenarioType::ALL {
            for seed in 0..10 {
                let call = generate(&scenario(kind, seed), &profile, seed).unwrap();
                for turn in &call.conversation.turns {
                    match turn.speaker {
                        Speaker::Customer => assert!(noise::has_disfluency(&turn.text), "{}", turn.text),
                        Speaker::Agent => assert!(!noise::has_disfluency(&turn.text), "{}", turn.text),
                    }
                }
            }
        }
    }

    #[test]
    fn stages_are_monotone_under_default_scripts() {
        for kind in ScenarioType::ALL {
            for seed in 0..20 {
                let call = generate(&scenario(kind, seed), &NoiseProfile::moderate(), seed).unwrap();
                let stages: Vec<_> = call
                    .conversation
                    .turns
                    .iter()
                    .map(|t| t.gold.as_ref().unwrap().call_stage)
                    .collect();
                assert!(stages.windows(2).all(|w| w[0] <= w[1]), "{kind}: {stages:?}");
                assert_eq!(stages[0], CallStageLabel::Opening);
            }
        }
    }

    #[test]
    fn promise_turns_carry_both_promise_slots() {
        for kind in [ScenarioType::Cooperative, ScenarioType::PaymentCommitment, ScenarioType::Negotiation] {
            for seed in 0..20 {
                let call = generate(&scenario(kind, seed), &NoiseProfile::none(), seed).unwrap();
                let promises: Vec<_> = call
                    .conversation
                    .turns
                    .iter()
                    .filter(|t| t.speaker == Speaker::Customer)
                    .filter_map(|t| t.gold.as_ref())
                    .filter(|g| g.intent.as_str() == "promise_payment")
                    .collect();
                assert_eq!(promises.len(), 1);
                let g = promises[0];
                assert_eq!(g.call_stage, CallStageLabel::Commitment);
                assert!(g.slots.promised_payment_amount.is_some());
                assert!(g.slots.promised_payment_date.is_some());
            }
        }
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut s = scenario(ScenarioType::Cooperative, 1);
        s.stage_script.clear();
        assert_eq!(s.validate(), Err(ScenarioError::EmptyScript));

        let mut s = scenario(ScenarioType::Cooperative, 1);
        s.stage_script.remove(0);
        assert!(matches!(s.validate(), Err(ScenarioError::MustOpen(_))));

        let mut s = scenario(ScenarioType::Cooperative, 1);
        s.stage_script[1].min_turns = 5;
        s.stage_script[1].max_turns = 2;
        assert!(matches!(s.validate(), Err(ScenarioError::BadBounds { index: 1, .. })));

        let mut s = scenario(ScenarioType::Resistance, 1);
        s.stage_script.retain(|step| step.stage != CallStageLabel::Negotiation);
        assert!(matches!(s.validate(), Err(ScenarioError::NoDecisiveStep { .. })));
    }

    #[test]
    fn missing_stage_templates_is_an_error() {
        let mut pack = LanguagePack::default();
        pack.agent.remove(&CallStageLabel::Closure);
        let sim = Simulator::new(pack);
        let err = sim
            .generate(&scenario(ScenarioType::Cooperative, 3), &NoiseProfile::none(), 3)
            .unwrap_err();
        assert!(matches!(
            err,
            GenerateError::MissingTemplates {
                stage: CallStageLabel::Closure,
                ..
            }
        ));
    }

    #[test]
    fn corpus_counts_and_ids() {
        let mut config = CorpusConfig::default();
        config.counts.insert(ScenarioType::Cooperative, 2);
        config.counts.insert(ScenarioType::Resistance, 1);
        let corpus = generate_corpus(&config, &NoiseProfile::moderate(), 100).unwrap();
        assert_eq!(corpus.len(), 3);
        let cooperative = corpus
            .iter()
            .filter(|c| c.conversation.metadata[META_SCENARIO] == "cooperative")
            .count();
        assert_eq!(cooperative, 2);
        let again = generate_corpus(&config, &NoiseProfile::moderate(), 100).unwrap();
        assert_eq!(corpus, again);
        // any call is reproducible alone from base_seed + ordinal
        let third = &corpus[2];
        let alone = generate(&third.scenario, &NoiseProfile::moderate(), 102).unwrap();
        assert_eq!(&alone, third);
    }
}
