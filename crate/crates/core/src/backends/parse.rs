//! Validation and repair of structured model outputs.
//!
//! Repairs run in a fixed order and each is recorded at most once:
//!
//! 1. `strip_fences`: drop Markdown code-fence lines.
//! 2. `extract_first_object`: cut the single balanced JSON object out of
//!    surrounding prose.
//! 3. `coerce_numbers`: amount strings or bare numbers become money objects,
//!    numeric strings become integers.
//! 4. `normalize_dates`: `dd/mm/yyyy`, `dd-mm-yyyy`, `dd.mm.yyyy`,
//!    `yyyy/mm/dd` and (given a reference date) `dd/mm` become ISO-8601.
//! 5. `map_label_alias`: case variants and synonyms from the alias table.
//!
//! Anything else fails with a [`FailureClass`].

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::context::OUTPUT_SCHEMA_VERSION;
use crate::model::{
    validate_annotation, AnnotationViolation, CallStageLabel, EmotionLabel, SentimentLabel,
    SlotName, TurnAnnotation,
};
use crate::taxonomy::IntentTaxonomy;

pub const DEFAULT_ALIAS_DOCUMENT: &str = include_str!("../../data/label_aliases.v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStep {
    StripFences,
    ExtractFirstObject,
    CoerceNumbers,
    NormalizeDates,
    MapLabelAlias,
}

impl RepairStep {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairStep::StripFences => "strip_fences",
            RepairStep::ExtractFirstObject => "extract_first_object",
            RepairStep::CoerceNumbers => "coerce_numbers",
            RepairStep::NormalizeDates => "normalize_dates",
            RepairStep::MapLabelAlias => "map_label_alias",
        }
    }
}

impl fmt::Display for RepairStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    NotJson,
    SchemaViolation,
    UnknownLabel,
    MultipleObjects,
    EmptyOutput,
}

impl FailureClass {
    pub const ALL: [FailureClass; 5] = [
        FailureClass::NotJson,
        FailureClass::SchemaViolation,
        FailureClass::UnknownLabel,
        FailureClass::MultipleObjects,
        FailureClass::EmptyOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::NotJson => "not_json",
            FailureClass::SchemaViolation => "schema_violation",
            FailureClass::UnknownLabel => "unknown_label",
            FailureClass::MultipleObjects => "multiple_objects",
            FailureClass::EmptyOutput => "empty_output",
        }
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of parsing one model output. `annotation` is `None` exactly when
/// `failure_class` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub annotation: Option<TurnAnnotation>,
    pub repairs_applied: Vec<RepairStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_class: Option<FailureClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ParseOutcome {
    fn success(annotation: TurnAnnotation, repairs: Vec<RepairStep>) -> Self {
        ParseOutcome {
            annotation: Some(annotation),
            repairs_applied: repairs,
            failure_class: None,
            detail: None,
        }
    }

    fn failure(class: FailureClass, repairs: Vec<RepairStep>, detail: impl Into<String>) -> Self {
        ParseOutcome {
            annotation: None,
            repairs_applied: repairs,
            failure_class: Some(class),
            detail: Some(detail.into()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.annotation.is_some()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParserError {
    #[error("unsupported output schema version {0:?}")]
    UnknownSchema(String),
    #[error("alias table: {0}")]
    Aliases(#[from] serde_json::Error),
}

/// Label synonyms per task, keyed by normalized alias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasTable {
    pub version: String,
    #[serde(default)]
    pub emotion: BTreeMap<String, String>,
    #[serde(default)]
    pub sentiment: BTreeMap<String, String>,
    #[serde(default)]
    pub call_stage: BTreeMap<String, String>,
    #[serde(default)]
    pub intent: BTreeMap<String, String>,
}

impl Default for AliasTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_ALIAS_DOCUMENT).expect("shipped alias table is valid")
    }
}

/// Day/month without a year resolves to the reference year, rolled forward
/// one year when that would land more than 180 days before the reference.
pub fn resolve_day_month(day: u32, month: u32, reference: NaiveDate) -> Option<NaiveDate> {
    let candidate = NaiveDate::from_ymd_opt(reference.year(), month, day)?;
    if (reference - candidate).num_days() > 180 {
        NaiveDate::from_ymd_opt(reference.year() + 1, month, day)
    } else {
        Some(candidate)
    }
}

/// Parses a date in any accepted form. `None` when the text is not a date.
pub fn parse_flexible_date(text: &str, reference: Option<NaiveDate>) -> Option<NaiveDate> {
    let text = text.trim();
    if let Ok(date) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Some(date);
    }
    for format in ["%d/%m/%Y", "%d-%m-%Y", "%d.%m.%Y", "%Y/%m/%d"] {
        if let Ok(date) = NaiveDate::parse_from_str(text, format) {
            return Some(date);
        }
    }
    let parts: Vec<&str> = text.split('/').collect();
    if let ([d, m], Some(reference)) = (parts.as_slice(), reference) {
        if d.len() <= 2 && m.len() <= 2 {
            return resolve_day_month(d.parse().ok()?, m.parse().ok()?, reference);
        }
    }
    None
}

/// Parses amount text such as `2.000.000`, `2,000,000 VND`, `2000000 đồng`
/// or `2 triệu` into integer units.
pub fn parse_amount_text(text: &str) -> Option<i64> {
    let lower = text.trim().to_lowercase();
    let mut body = lower.as_str();
    for suffix in ["vnd", "đồng", "dong", "đ"] {
        if let Some(stripped) = body.strip_suffix(suffix) {
            body = stripped.trim_end();
            break;
        }
    }
    if let Some(number) = body.strip_suffix("triệu") {
        let number = number.trim().replace(',', ".");
        let millions: f64 = number.parse().ok()?;
        let units = (millions * 1_000_000.0).round();
        return (units.is_finite() && units.fract() == 0.0).then_some(units as i64);
    }
    if body.is_empty() {
        return None;
    }
    if body.chars().all(|c| c.is_ascii_digit()) {
        return body.parse().ok();
    }
    for separator in ['.', ',', ' '] {
        let groups: Vec<&str> = body.split(separator).collect();
        let well_grouped = groups.len() > 1
            && (1..=3).contains(&groups[0].len())
            && groups[1..].iter().all(|g| g.len() == 3)
            && groups.iter().all(|g| g.chars().all(|c| c.is_ascii_digit()));
        if well_grouped {
            return groups.concat().parse().ok();
        }
    }
    None
}

/// Top-level balanced `{...}` spans, skipping braces inside JSON strings.
fn balanced_objects(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' if depth > 0 => in_string = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

const ANNOTATION_KEYS: [&str; 5] = ["emotion", "sentiment", "intent", "call_stage", "slots"];

struct Trail(Vec<RepairStep>);

impl Trail {
    fn record(&mut self, step: RepairStep) {
        if !self.0.contains(&step) {
            self.0.push(step);
        }
    }
}

/// Parses model outputs under one schema version, taxonomy and alias table.
#[derive(Debug, Clone)]
pub struct OutputParser {
    taxonomy: IntentTaxonomy,
    aliases: AliasTable,
}

impl OutputParser {
    pub fn new(schema_version: &str, taxonomy: IntentTaxonomy, aliases: AliasTable) -> Result<Self, ParserError> {
        if schema_version != OUTPUT_SCHEMA_VERSION {
            return Err(ParserError::UnknownSchema(schema_version.to_string()));
        }
        Ok(OutputParser { taxonomy, aliases })
    }

    pub fn with_taxonomy(taxonomy: IntentTaxonomy) -> Self {
        OutputParser {
            taxonomy,
            aliases: AliasTable::default(),
        }
    }

    pub fn taxonomy(&self) -> &IntentTaxonomy {
        &self.taxonomy
    }

    pub fn aliases(&self) -> &AliasTable {
        &self.aliases
    }

    /// `reference_date` resolves dates given without a year.
    pub fn parse(&self, text: &str, reference_date: Option<NaiveDate>) -> ParseOutcome {
        let mut trail = Trail(Vec::new());
        if text.trim().is_empty() {
            return ParseOutcome::failure(FailureClass::EmptyOutput, trail.0, "output is empty");
        }

        // 1. strip_fences
        let mut body = text.to_string();
        if text.lines().any(|l| l.trim_start().starts_with("```")) {
            body = text
                .lines()
                .filter(|l| !l.trim_start().starts_with("```"))
                .collect::<Vec<_>>()
                .join("\n");
            trail.record(RepairStep::StripFences);
        }

        // 2. extract_first_object
        let spans = balanced_objects(&body);
        let (start, end) = match spans.as_slice() {
            [] => {
                return ParseOutcome::failure(FailureClass::NotJson, trail.0, "no JSON object found")
            }
            [span] => *span,
            _ => {
                return ParseOutcome::failure(
                    FailureClass::MultipleObjects,
                    trail.0,
                    format!("{} JSON objects found", spans.len()),
                )
            }
        };
        if !body[..start].trim().is_empty() || !body[end..].trim().is_empty() {
            trail.record(RepairStep::ExtractFirstObject);
        }
        let mut object = match serde_json::from_str::<Value>(&body[start..end]) {
            Ok(Value::Object(map)) => map,
            Ok(_) => return ParseOutcome::failure(FailureClass::NotJson, trail.0, "not an object"),
            Err(e) => return ParseOutcome::failure(FailureClass::NotJson, trail.0, e.to_string()),
        };

        if let Err(detail) = check_top_level_keys(&object) {
            return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
        }
        let slots = match object.get_mut("slots") {
            Some(Value::Object(slots)) => slots,
            _ => {
                return ParseOutcome::failure(
                    FailureClass::SchemaViolation,
                    trail.0,
                    "slots must be an object",
                )
            }
        };
        if let Some(extra) = slots.keys().find(|k| k.parse::<SlotName>().is_err()) {
            let detail = format!("unknown slot {extra:?}");
            return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
        }
        // absent slot keys mean null
        for slot in SlotName::ALL {
            slots.entry(slot.as_str()).or_insert(Value::Null);
        }

        // 3. coerce_numbers
        for slot in [SlotName::TotalDebt, SlotName::PromisedPaymentAmount] {
            match coerce_amount(slots.get_mut(slot.as_str()).expect("filled")) {
                Ok(true) => trail.record(RepairStep::CoerceNumbers),
                Ok(false) => {}
                Err(detail) => {
                    let detail = format!("{slot}: {detail}");
                    return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
                }
            }
        }
        match coerce_integer(slots.get_mut(SlotName::DaysPastDue.as_str()).expect("filled")) {
            Ok(true) => trail.record(RepairStep::CoerceNumbers),
            Ok(false) => {}
            Err(detail) => {
                let detail = format!("days_past_due: {detail}");
                return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
            }
        }

        // 4. normalize_dates
        for slot in [SlotName::PromisedPaymentDate, SlotName::DueDate] {
            let value = slots.get_mut(slot.as_str()).expect("filled");
            match normalize_date(value, reference_date) {
                Ok(true) => trail.record(RepairStep::NormalizeDates),
                Ok(false) => {}
                Err(detail) => {
                    let detail = format!("{slot}: {detail}");
                    return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
                }
            }
        }

        // 5. map_label_alias
        for key in ["emotion", "sentiment", "call_stage", "intent"] {
            let value = object.get_mut(key).expect("checked");
            let Some(raw) = value.as_str() else {
                let detail = format!("{key} must be a string");
                return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, detail);
            };
            match self.resolve_label(key, raw) {
                Some(canonical) if canonical == raw => {}
                Some(canonical) => {
                    *value = Value::String(canonical);
                    trail.record(RepairStep::MapLabelAlias);
                }
                None => {
                    let detail = format!("{key} {raw:?} is not a known label");
                    return ParseOutcome::failure(FailureClass::UnknownLabel, trail.0, detail);
                }
            }
        }

        let annotation: TurnAnnotation = match serde_json::from_value(Value::Object(object)) {
            Ok(a) => a,
            Err(e) => {
                return ParseOutcome::failure(FailureClass::SchemaViolation, trail.0, e.to_string())
            }
        };
        if let Some(violation) = validate_annotation(&annotation, &self.taxonomy).into_iter().next() {
            let class = match violation {
                AnnotationViolation::UnknownIntent(_) => FailureClass::UnknownLabel,
                _ => FailureClass::SchemaViolation,
            };
            return ParseOutcome::failure(class, trail.0, violation.to_string());
        }
        ParseOutcome::success(annotation, trail.0)
    }

    fn is_canonical(&self, key: &str, label: &str) -> bool {
        match key {
            "emotion" => label.parse::<EmotionLabel>().is_ok(),
            "sentiment" => label.parse::<SentimentLabel>().is_ok(),
            "call_stage" => label.parse::<CallStageLabel>().is_ok(),
            _ => self.taxonomy.contains(label),
        }
    }

    /// Canonical label for `raw`, directly, by normalization or by alias.
    fn resolve_label(&self, key: &str, raw: &str) -> Option<String> {
        if self.is_canonical(key, raw) {
            return Some(raw.to_string());
        }
        let normalized = raw.trim().to_lowercase().replace([' ', '-'], "_");
        if self.is_canonical(key, &normalized) {
            return Some(normalized);
        }
        let table = match key {
            "emotion" => &self.aliases.emotion,
            "sentiment" => &self.aliases.sentiment,
            "call_stage" => &self.aliases.call_stage,
            _ => &self.aliases.intent,
        };
        table
            .get(&normalized)
            .filter(|target| self.is_canonical(key, target))
            .cloned()
    }
}

impl Default for OutputParser {
    fn default() -> Self {
        OutputParser::with_taxonomy(IntentTaxonomy::default())
    }
}

fn check_top_level_keys(object: &Map<String, Value>) -> Result<(), String> {
    if let Some(missing) = ANNOTATION_KEYS.iter().find(|k| !object.contains_key(**k)) {
        return Err(format!("missing field {missing:?}"));
    }
    if let Some(extra) = object.keys().find(|k| !ANNOTATION_KEYS.contains(&k.as_str())) {
        return Err(format!("unexpected field {extra:?}"));
    }
    Ok(())
}

fn money_value(units: i64, currency: &str) -> Value {
    serde_json::json!({ "currency": currency, "minor_units": units })
}

/// Returns whether the value was changed.
fn coerce_amount(value: &mut Value) -> Result<bool, String> {
    match value {
        Value::Null => Ok(false),
        Value::Number(n) => {
            let units = n.as_i64().ok_or("amount must be an integer")?;
            *value = money_value(units, "VND");
            Ok(true)
        }
        Value::String(s) => {
            let units = parse_amount_text(s).ok_or_else(|| format!("unreadable amount {s:?}"))?;
            *value = money_value(units, "VND");
            Ok(true)
        }
        Value::Object(map) => match map.get("minor_units") {
            Some(Value::String(s)) => {
                let units = parse_amount_text(s).ok_or_else(|| format!("unreadable amount {s:?}"))?;
                map.insert("minor_units".into(), Value::from(units));
                Ok(true)
            }
            _ => Ok(false),
        },
        _ => Err("amount has the wrong type".into()),
    }
}

fn coerce_integer(value: &mut Value) -> Result<bool, String> {
    match value {
        Value::String(s) => {
            let n: u32 = s.trim().parse().map_err(|_| format!("unreadable integer {s:?}"))?;
            *value = Value::from(n);
            Ok(true)
        }
        Value::Number(n) if n.as_u64().is_none() => match n.as_f64() {
            Some(f) if f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64 => {
                *value = Value::from(f as u32);
                Ok(true)
            }
            _ => Err(format!("{n} is not a non-negative integer")),
        },
        _ => Ok(false),
    }
}

fn normalize_date(value: &mut Value, reference: Option<NaiveDate>) -> Result<bool, String> {
    let Value::String(s) = value else {
        return Ok(false);
    };
    if NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok() {
        return Ok(false);
    }
    let date = parse_flexible_date(s, reference).ok_or_else(|| format!("unreadable date {s:?}"))?;
    *value = Value::String(date.format("%Y-%m-%d").to_string());
    Ok(true)
}

/// Parses with the default taxonomy and alias table.
pub fn parse_structured_output(text: &str, reference_date: Option<NaiveDate>) -> ParseOutcome {
    OutputParser::default().parse(text, reference_date)
}
