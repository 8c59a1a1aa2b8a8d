//! Turn-level scoring: accuracy, entity accuracy, macro average, Cohen's κ.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::model::{SlotName, SlotValue, Task, TurnAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("prediction and gold lengths differ: {pred} vs {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("nothing to score")]
    Empty,
    #[error("unknown slot name {0:?}")]
    UnknownSlot(String),
    #[error("macro average needs all four tasks; missing {0}")]
    MissingTask(Task),
}

fn check_lengths(pred: usize, gold: usize) -> Result<(), MetricError> {
    if pred != gold {
        return Err(MetricError::LengthMismatch { pred, gold });
    }
    if gold == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Exact-match accuracy on one task. A `None` prediction (parse failure or
/// missing output) counts as wrong.
pub fn classification_accuracy(
    pred: &[Option<TurnAnnotation>],
    gold: &[TurnAnnotation],
    task: Task,
) -> Result<Fraction, MetricError> {
    check_lengths(pred.len(), gold.len())?;
    let correct = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_ref().is_some_and(|p| p.label(task) == g.label(task)))
        .count();
    Ok(Fraction::new(correct as u64, gold.len() as u64).expect("non-empty"))
}

/// Entity-level score for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlotScore {
    Scored { accuracy: Fraction, support: u64 },
    /// Neither side filled the slot on any turn.
    NotApplicable,
}

impl SlotScore {
    pub fn accuracy(&self) -> Option<Fraction> {
        match self {
            SlotScore::Scored { accuracy, .. } => Some(*accuracy),
            SlotScore::NotApplicable => None,
        }
    }
}

/// Comparison key for a slot value. Names ignore case and collapse runs of
/// whitespace; amounts compare by currency and integer minor units; dates by
/// calendar day.
pub fn normalized_slot_value(value: &SlotValue) -> String {
    match value {
        SlotValue::Name(name) => name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase(),
        SlotValue::Amount(money) => format!("{} {}", money.minor_units, money.currency.as_str().to_uppercase()),
        SlotValue::Days(days) => days.to_string(),
        SlotValue::Date(date) => date.format("%Y-%m-%d").to_string(),
    }
}

/// Accuracy over turns where gold or prediction fills `slot`. A `None`
/// prediction has every slot null.
pub fn entity_accuracy_for(
    pred: &[Option<TurnAnnotation>],
    gold: &[TurnAnnotation],
    slot: SlotName,
) -> Result<SlotScore, MetricError> {
    check_lengths(pred.len(), gold.len())?;
    let mut support = 0u64;
    let mut correct = 0u64;
    for (p, g) in pred.iter().zip(gold) {
        let g = g.slots.get(slot).map(|v| normalized_slot_value(&v));
        let p = p.as_ref().and_then(|p| p.slots.get(slot)).map(|v| normalized_slot_value(&v));
        if g.is_none() && p.is_none() {
            continue;
        }
        support += 1;
        if g == p {
            correct += 1;
        }
    }
    Ok(match Fraction::new(correct, support) {
        Some(accuracy) => SlotScore::Scored { accuracy, support },
        None => SlotScore::NotApplicable,
    })
}

pub fn entity_accuracy(
    pred: &[Option<TurnAnnotation>],
    gold: &[TurnAnnotation],
    slot: &str,
) -> Result<SlotScore, MetricError> {
    let slot: SlotName = slot.parse().map_err(|_| MetricError::UnknownSlot(slot.to_string()))?;
    entity_accuracy_for(pred, gold, slot)
}

/// Unweighted mean of the four task accuracies, exact. Present it with
/// `round_half_up(2)`.
pub fn macro_average(per_task: &BTreeMap<Task, Fraction>) -> Result<Fraction, MetricError> {
    let mut values = Vec::with_capacity(Task::ALL.len());
    for task in Task::ALL {
        values.push(*per_task.get(&task).ok_or(MetricError::MissingTask(task))?);
    }
    Ok(Fraction::mean(&values).expect("four values"))
}

/// Cohen's κ as an exact ratio of integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Kappa {
    Defined { numerator: i128, denominator: i128 },
    /// Chance agreement is 1 but observed agreement is not.
    Undefined,
}

impl Kappa {
    pub fn value(&self) -> Option<f64> {
        match self {
            Kappa::Defined { numerator, denominator } => Some(*numerator as f64 / *denominator as f64),
            Kappa::Undefined => None,
        }
    }
}

/// κ = (p_o − p_e) / (1 − p_e), with p_e from each annotator's marginal
/// label frequencies. Scaled by n², this is
/// (n·agree − Σ a_k·b_k) / (n² − Σ a_k·b_k).
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<Kappa, MetricError> {
    check_lengths(a.len(), b.len())?;
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut marginals: HashMap<&L, (i128, i128)> = HashMap::new();
    for x in a {
        marginals.entry(x).or_default().0 += 1;
    }
    for y in b {
        marginals.entry(y).or_default().1 += 1;
    }
    let chance: i128 = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let denominator = n * n - chance;
    if denominator == 0 {
        return Ok(if agree == n {
            Kappa::Defined { numerator: 1, denominator: 1 }
        } else {
            Kappa::Undefined
        });
    }
    Ok(Kappa::Defined {
        numerator: n * agree - chance,
        denominator,
    })
}
