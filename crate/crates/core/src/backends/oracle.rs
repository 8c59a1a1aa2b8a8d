//! Deterministic keyword/pattern annotator.
//!
//! On simulator output it recovers gold exactly: noise markers are stripped
//! first, then labels come from cue lexicons matched as whole-token
//! sequences. On other text the same rules act as a weak keyword baseline.
//!
//! Normalization order: background-noise markers, overlap spans, hesitation
//! tokens, self-corrections (`w à nhầm, `), exact consecutive duplicate
//! tokens, truncation markers, whitespace.
//!
//! Agent turns are always neutral / none / other. Their stage is the first
//! matching cue group in the order closure, commitment, negotiation,
//! verification, opening; otherwise the stage of the latest context turn
//! that has one, otherwise opening. Customer turns take the stage of the
//! latest agent turn in context, falling back to their own cues.

use std::collections::HashMap;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;

use super::parse::{parse_flexible_date, resolve_day_month};
use crate::context::{InferenceRequest, RequestTurn};
use crate::model::{
    CallStageLabel, EmotionLabel, IntentLabel, Money, SentimentLabel, Speaker, SlotValues,
    TurnAnnotation,
};
use crate::simulator::noise::{HESITATION_TOKENS, NOISE_MARKERS, TRUNCATION_MARKER};

type Cues = &'static [&'static str];

const STAGE_CUES: [(CallStageLabel, Cues); 5] = [
    (CallStageLabel::Closure, &["tạm biệt", "kết thúc cuộc gọi", "chúc"]),
    (CallStageLabel::Commitment, &["ghi nhận", "cam kết"]),
    (
        CallStageLabel::Negotiation,
        &["quá hạn", "hạn thanh toán", "phương án", "hỗ trợ"],
    ),
    (
        CallStageLabel::Verification,
        &["có phải", "xác minh", "xác nhận thông tin"],
    ),
    (CallStageLabel::Opening, &["xin chào", "alo"]),
];

const SENTIMENT_CUES: [(SentimentLabel, Cues); 3] = [
    (SentimentLabel::Threat, &["báo công an", "kiện", "coi chừng", "liệu hồn"]),
    (SentimentLabel::Insult, &["lừa đảo", "vô học", "mất dạy", "đồ khốn"]),
    (
        SentimentLabel::Refusal,
        &["không trả", "không bao giờ trả", "đừng gọi", "không muốn nói chuyện"],
    ),
];

const NEGATIVE_CUES: Cues = &["bực", "phiền", "mệt mỏi", "khó khăn", "lo lắng", "chán"];
const POSITIVE_CUES: Cues = &["cảm ơn", "vui", "tốt quá", "may quá", "yên tâm"];

const INTENT_CUES: [(&str, Cues); 8] = [
    ("wrong_person", &["nhầm số", "nhầm người"]),
    ("dispute_debt", &["không vay", "không nợ", "sai số tiền"]),
    ("refuse_payment", &["không trả", "không bao giờ trả"]),
    (
        "promise_payment",
        &["sẽ trả", "sẽ chuyển", "sẽ thanh toán", "hứa trả"],
    ),
    ("request_deferment", &["gia hạn", "thêm thời gian", "hoãn", "khất"]),
    ("evade", &["đang bận", "gọi lại sau", "không tiện"]),
    (
        "request_information",
        &["bao nhiêu", "khoản gì", "tại sao", "là sao"],
    ),
    ("cooperate", &["vâng", "dạ", "đúng rồi", "được", "đồng ý", "ok"]),
];

const DEBT_KEYWORDS: Cues = &["nợ"];
const PAYMENT_KEYWORDS: Cues = &["trả", "thanh toán", "chuyển", "đóng"];
const DUE_KEYWORDS: Cues = &["hạn thanh toán", "đến hạn"];
const PROMISE_DATE_KEYWORDS: Cues = &["vào ngày", "trước ngày", "hẹn"];

static OVERLAP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[overlap:[^\]]*\]").unwrap());
static SELF_CORRECTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\S+ à nhầm, ").unwrap());
static DOTTED_AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d{1,3}(?:\.\d{3})+\b").unwrap());
static MILLIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d+(?:[.,]\d+)?) triệu\b").unwrap());
static PLAIN_AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d+) (?:đồng|vnd)\b").unwrap());
static DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:\d{4}-\d{2}-\d{2}|\d{1,2}/\d{1,2}(?:/\d{4})?)\b").unwrap()
});
static DAYS_PAST_DUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)quá hạn (\d+) ngày").unwrap());

const NAME: &str = r"(\p{Lu}[\p{Ll}\p{M}]*(?: \p{Lu}[\p{Ll}\p{M}]*)*)";
static AGENT_SELF_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b(?:[Ee]m|[Tt]ôi) là {NAME}")).unwrap());
static AGENT_ASKS_NAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"\b(?:có phải (?:là )?(?:anh|chị) {NAME}|(?:anh|chị) là {NAME})"
    ))
    .unwrap()
});

/// Strips every noise marker, leaving the underlying utterance.
pub fn normalize_text(text: &str) -> String {
    let without_markers: Vec<&str> = text
        .split_whitespace()
        .filter(|t| !NOISE_MARKERS.contains(t))
        .collect();
    let joined = without_markers.join(" ");
    let no_overlap = OVERLAP.replace_all(&joined, " ");
    let no_hesitation: Vec<&str> = no_overlap
        .split_whitespace()
        .filter(|t| !HESITATION_TOKENS.contains(t))
        .collect();
    let joined = format!("{} ", no_hesitation.join(" "));
    let corrected = SELF_CORRECTION.replace_all(&joined, "");
    let mut tokens: Vec<&str> = Vec::new();
    for token in corrected.split_whitespace() {
        if token == TRUNCATION_MARKER || tokens.last() == Some(&token) {
            continue;
        }
        tokens.push(token);
    }
    tokens.join(" ")
}

fn word_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation() || c == '…')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_phrase(tokens: &[String], phrase: &str) -> bool {
    let needle: Vec<&str> = phrase.split(' ').collect();
    tokens
        .windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

fn any_phrase(tokens: &[String], cues: Cues) -> bool {
    cues.iter().any(|cue| contains_phrase(tokens, cue))
}

fn stage_from_cues(tokens: &[String]) -> Option<CallStageLabel> {
    STAGE_CUES
        .iter()
        .find(|(_, cues)| any_phrase(tokens, cues))
        .map(|(stage, _)| *stage)
}

static KEYWORD_PATTERNS: LazyLock<HashMap<&'static str, Regex>> = LazyLock::new(|| {
    [DEBT_KEYWORDS, PAYMENT_KEYWORDS, DUE_KEYWORDS, PROMISE_DATE_KEYWORDS]
        .iter()
        .flat_map(|cues| cues.iter())
        .map(|cue| {
            let re = Regex::new(&format!(r"\b{}\b", regex::escape(cue))).expect("escaped cue");
            (*cue, re)
        })
        .collect()
});

/// Byte offset where the last keyword from `cues` before `limit` ends.
fn last_keyword_end(lower: &str, limit: usize, cues: Cues) -> Option<usize> {
    cues.iter()
        .filter_map(|cue| {
            KEYWORD_PATTERNS[cue]
                .find_iter(&lower[..limit])
                .map(|m| m.end())
                .last()
        })
        .max()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AmountKind {
    Debt,
    Payment,
}

fn classify_amount(lower: &str, start: usize) -> AmountKind {
    let debt = last_keyword_end(lower, start, DEBT_KEYWORDS);
    let payment = last_keyword_end(lower, start, PAYMENT_KEYWORDS);
    match (debt, payment) {
        (_, None) => AmountKind::Debt,
        (None, Some(_)) => AmountKind::Payment,
        (Some(d), Some(p)) if d > p => AmountKind::Debt,
        _ => AmountKind::Payment,
    }
}

/// True when the nearest date keyword before `start` marks a due date.
/// Due-date keywords win ties.
fn is_due_date(lower: &str, start: usize) -> bool {
    let due = last_keyword_end(lower, start, DUE_KEYWORDS);
    let promise = last_keyword_end(lower, start, PROMISE_DATE_KEYWORDS);
    match (due, promise) {
        (Some(d), Some(p)) => d >= p,
        (Some(_), None) => true,
        _ => false,
    }
}

fn extract_amounts(lower: &str, slots: &mut SlotValues) {
    let mut found: Vec<(usize, i64)> = Vec::new();
    for m in DOTTED_AMOUNT.find_iter(lower) {
        if let Ok(units) = m.as_str().replace('.', "").parse() {
            found.push((m.start(), units));
        }
    }
    for c in MILLIONS.captures_iter(lower) {
        let whole = c.get(0).expect("match");
        if let Ok(millions) = c[1].replace(',', ".").parse::<f64>() {
            found.push((whole.start(), (millions * 1_000_000.0).round() as i64));
        }
    }
    for c in PLAIN_AMOUNT.captures_iter(lower) {
        let whole = c.get(0).expect("match");
        if found.iter().any(|(start, _)| *start == whole.start()) {
            continue;
        }
        if let Ok(units) = c[1].parse() {
            found.push((whole.start(), units));
        }
    }
    found.sort();
    for (start, units) in found {
        if units <= 0 {
            continue;
        }
        match classify_amount(lower, start) {
            AmountKind::Debt => slots.total_debt = Some(Money::vnd(units)),
            AmountKind::Payment => slots.promised_payment_amount = Some(Money::vnd(units)),
        }
    }
}

fn extract_dates(lower: &str, reference: Option<NaiveDate>, slots: &mut SlotValues) {
    for m in DATE.find_iter(lower) {
        let parsed = match m.as_str().split('/').collect::<Vec<_>>().as_slice() {
            [d, mth] => reference.and_then(|r| resolve_day_month(d.parse().ok()?, mth.parse().ok()?, r)),
            _ => parse_flexible_date(m.as_str(), reference),
        };
        let Some(date) = parsed else { continue };
        if is_due_date(lower, m.start()) {
            slots.due_date = Some(date);
        } else {
            slots.promised_payment_date = Some(date);
        }
    }
}

fn first_capture(re: &Regex, text: &str) -> Option<String> {
    re.captures(text)
        .and_then(|c| c.iter().skip(1).flatten().next().map(|m| m.as_str().to_string()))
}

fn extract_slots(text: &str, speaker: Speaker, reference: Option<NaiveDate>) -> SlotValues {
    let mut slots = SlotValues::default();
    let lower = text.to_lowercase();
    extract_amounts(&lower, &mut slots);
    extract_dates(&lower, reference, &mut slots);
    if let Some(c) = DAYS_PAST_DUE.captures(text) {
        slots.days_past_due = c[1].parse().ok();
    }
    match speaker {
        Speaker::Agent => {
            slots.agent_name = first_capture(&AGENT_SELF_NAME, text);
            slots.customer_name = first_capture(&AGENT_ASKS_NAME, text);
        }
        Speaker::Customer => slots.customer_name = first_capture(&AGENT_SELF_NAME, text),
    }
    slots
}

/// Stage of a turn judged on its own text and the turns before it.
fn turn_stage(turn: &RequestTurn, history: &[RequestTurn]) -> Option<CallStageLabel> {
    let tokens = word_tokens(&normalize_text(&turn.text));
    match turn.speaker {
        Speaker::Agent => stage_from_cues(&tokens).or_else(|| {
            history
                .iter()
                .enumerate()
                .rev()
                .find_map(|(i, t)| turn_stage(t, &history[..i]))
        }),
        Speaker::Customer => history
            .iter()
            .enumerate()
            .rev()
            .find(|(_, t)| t.speaker == Speaker::Agent)
            .and_then(|(i, t)| turn_stage(t, &history[..i]))
            .or_else(|| stage_from_cues(&tokens)),
    }
}

/// Rule-based annotation of the request's target turn.
pub fn rule_oracle_annotate(request: &InferenceRequest) -> TurnAnnotation {
    let target = &request.target_turn;
    let text = normalize_text(&target.text);
    let tokens = word_tokens(&text);
    let call_stage = turn_stage(target, &request.context_turns).unwrap_or(CallStageLabel::Opening);
    let slots = extract_slots(&text, target.speaker, request.reference_date);

    if target.speaker == Speaker::Agent {
        return TurnAnnotation {
            call_stage,
            slots,
            ..TurnAnnotation::default_for_unmatched()
        };
    }

    let sentiment = SENTIMENT_CUES
        .iter()
        .find(|(_, cues)| any_phrase(&tokens, cues))
        .map(|(label, _)| *label)
        .unwrap_or(SentimentLabel::None);
    let emotion = if sentiment != SentimentLabel::None || any_phrase(&tokens, NEGATIVE_CUES) {
        EmotionLabel::Negative
    } else if any_phrase(&tokens, POSITIVE_CUES) {
        EmotionLabel::Positive
    } else {
        EmotionLabel::Neutral
    };
    let intent = INTENT_CUES
        .iter()
        .find(|(_, cues)| any_phrase(&tokens, cues))
        .map(|(label, _)| *label)
        .unwrap_or("other");

    TurnAnnotation {
        emotion,
        sentiment,
        intent: IntentLabel::new(intent),
        call_stage,
        slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::OUTPUT_SCHEMA_VERSION;

    fn request(history: &[(Speaker, &str)], target: (Speaker, &str)) -> InferenceRequest {
        let turn = |i: usize, (speaker, text): (Speaker, &str)| RequestTurn {
            turn_index: i as u32,
            speaker,
            text: text.to_string(),
        };
        InferenceRequest {
            instruction: String::new(),
            template_version: "t".into(),
            context_turns: history.iter().enumerate().map(|(i, t)| turn(i, *t)).collect(),
            target_turn: turn(history.len(), target),
            output_schema_version: OUTPUT_SCHEMA_VERSION.into(),
            reference_date: NaiveDate::from_ymd_opt(2024, 3, 1),
        }
    }

    #[test]
    fn normalization_undoes_each_marker() {
        assert_eq!(normalize_text("tôi tôi sẽ trả"), "tôi sẽ trả");
        assert_eq!(normalize_text("tôi à nhầm, tôi sẽ trả"), "tôi sẽ trả");
        assert_eq!(normalize_text("tôi ừm sẽ [noise] trả"), "tôi sẽ trả");
        assert_eq!(normalize_text("vâng cảm ơn em … [overlap: Em chào]"), "vâng cảm ơn em");
        assert_eq!(normalize_text("Vâng, à [static] nhầm, Vâng, tôi nghe"), "Vâng, tôi nghe");
    }

    #[test]
    fn promise_sentence_in_commitment_context() {
        let req = request(
            &[(Speaker::Agent, "Anh có thể cam kết thanh toán vào ngày nào")],
            (Speaker::Customer, "tôi sẽ trả 2.000.000 vào ngày 15/03"),
        );
        let ann = rule_oracle_annotate(&req);
        assert_eq!(ann.call_stage, CallStageLabel::Commitment);
        assert_eq!(ann.intent.as_str(), "promise_payment");
        assert_eq!(ann.slots.promised_payment_amount, Some(Money::vnd(2_000_000)));
        assert_eq!(ann.slots.promised_payment_date, NaiveDate::from_ymd_opt(2024, 3, 15));
        assert_eq!(ann.slots.total_debt, None);
    }

    #[test]
    fn greeting_without_context_is_opening() {
        let ann = rule_oracle_annotate(&request(&[], (Speaker::Agent, "Alo, xin chào anh")));
        assert_eq!(ann, TurnAnnotation::default_for_unmatched());
    }

    #[test]
    fn unmatched_text_gets_defaults() {
        let ann = rule_oracle_annotate(&request(&[], (Speaker::Customer, "hmm")));
        assert_eq!(ann, TurnAnnotation::default_for_unmatched());
    }

    #[test]
    fn due_date_beats_promise_keywords() {
        let req = request(
            &[],
            (Speaker::Agent, "Hạn thanh toán của anh là ngày 01/02/2024, hiện anh đang quá hạn 29 ngày"),
        );
        let ann = rule_oracle_annotate(&req);
        assert_eq!(ann.call_stage, CallStageLabel::Negotiation);
        assert_eq!(ann.slots.due_date, NaiveDate::from_ymd_opt(2024, 2, 1));
        assert_eq!(ann.slots.days_past_due, Some(29));
        assert_eq!(ann.slots.promised_payment_date, None);
    }

    #[test]
    fn names_by_speaker() {
        let agent = rule_oracle_annotate(&request(
            &[],
            (Speaker::Agent, "Xin chào chị, em là Thu Trang bên công ty tài chính"),
        ));
        assert_eq!(agent.slots.agent_name.as_deref(), Some("Thu Trang"));
        let asked = rule_oracle_annotate(&request(
            &[],
            (Speaker::Agent, "Dạ cho em hỏi có phải chị Trần Thu Hà không"),
        ));
        assert_eq!(asked.slots.customer_name.as_deref(), Some("Trần Thu Hà"));
        let customer = rule_oracle_annotate(&request(
            &[],
            (Speaker::Customer, "Vâng, tôi là Đỗ Thanh Hương đây"),
        ));
        assert_eq!(customer.slots.customer_name.as_deref(), Some("Đỗ Thanh Hương"));
        assert_eq!(customer.slots.agent_name, None);
    }

    #[test]
    fn sentiment_priority_and_emotion() {
        let ann = rule_oracle_annotate(&request(
            &[],
            (Speaker::Customer, "Gọi nữa là tôi báo công an đấy, tôi không bao giờ trả"),
        ));
        assert_eq!(ann.sentiment, SentimentLabel::Threat);
        assert_eq!(ann.emotion, EmotionLabel::Negative);
        assert_eq!(ann.intent.as_str(), "refuse_payment");
    }

    #[test]
    fn cues_match_whole_tokens_only() {
        // "được" must not fire inside "đượcc", "ok" not inside "okay"
        let ann = rule_oracle_annotate(&request(&[], (Speaker::Customer, "đượcc okay")));
        assert_eq!(ann.intent.as_str(), "other");
    }
}
