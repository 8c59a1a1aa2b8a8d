//! Exact non-negative fractions for rates and accuracies.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `numerator / denominator` with a non-zero denominator. Equality and
/// ordering compare values, so `1/2 == 2/4`.
#[derive(Debug, Clone, Copy)]
pub struct Fraction {
    numerator: u64,
    denominator: u64,
}

impl Fraction {
    /// `None` when `denominator` is zero.
    pub fn new(numerator: u64, denominator: u64) -> Option<Self> {
        (denominator > 0).then_some(Fraction {
            numerator,
            denominator,
        })
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Decimal string rounded half-up to `decimals` places, computed exactly.
    pub fn round_half_up(&self, decimals: u32) -> String {
        let scale = 10u128.pow(decimals);
        let n = self.numerator as u128 * scale;
        let d = self.denominator as u128;
        let scaled = (2 * n + d) / (2 * d);
        if decimals == 0 {
            return scaled.to_string();
        }
        let whole = scaled / scale;
        let frac = scaled % scale;
        format!("{whole}.{frac:0width$}", width = decimals as usize)
    }

    /// Parses `a/b` or a plain decimal such as `0.9`, exactly.
    pub fn parse(text: &str) -> Option<Fraction> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            return Fraction::new(n.trim().parse().ok()?, d.trim().parse().ok()?);
        }
        let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
        if whole.is_empty() && frac.is_empty() || frac.len() > 18 {
            return None;
        }
        if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let den = 10u64.pow(frac.len() as u32);
        let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        Fraction::new(whole.checked_mul(den)?.checked_add(frac)?, den)
    }

    /// Unweighted mean of fractions, exact.
    pub fn mean(values: &[Fraction]) -> Option<Fraction> {
        if values.is_empty() {
            return None;
        }
        let mut num: u128 = 0;
        let mut den: u128 = 1;
        for v in values {
            // num/den + a/b = (num*b + a*den) / (den*b)
            num = num * v.denominator as u128 + v.numerator as u128 * den;
            den *= v.denominator as u128;
            let g = gcd(num, den);
            num /= g;
            den /= g;
        }
        den *= values.len() as u128;
        let g = gcd(num, den);
        Fraction::new(
            u64::try_from(num / g).ok()?,
            u64::try_from(den / g).ok()?,
        )
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Fraction {}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numerator as u128 * other.denominator as u128)
            .cmp(&(other.numerator as u128 * self.denominator as u128))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Serialize, Deserialize)]
struct FractionDoc {
    numerator: u64,
    denominator: u64,
    #[serde(default)]
    value: Option<f64>,
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FractionDoc {
            numerator: self.numerator,
            denominator: self.denominator,
            value: Some(self.value()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = FractionDoc::deserialize(deserializer)?;
        Fraction::new(doc.numerator, doc.denominator)
            .ok_or_else(|| serde::de::Error::custom("denominator must be positive"))
    }
}
