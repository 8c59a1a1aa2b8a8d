//! Post-ASR noise phenomena realized as textual markers.
//!
//! Marker inventory (fixed; scanners and the rule oracle depend on it):
//!
//! | phenomenon       | realization                                   |
//! |------------------|-----------------------------------------------|
//! | hesitation       | standalone token from [`HESITATION_TOKENS`]   |
//! | repetition       | leading token duplicated: `tôi tôi sẽ trả`    |
//! | self-correction  | `w à nhầm, w ...` on the leading token `w`    |
//! | overlap          | `[overlap: w1 w2]` span quoting the next turn |
//! | fragment         | strict word prefix followed by [`TRUNCATION_MARKER`] |
//! | background noise | token from [`NOISE_MARKERS`]                  |

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const HESITATION_TOKENS: [&str; 3] = ["ờ", "ừm", "ơ"];
pub const SELF_CORRECTION_MARKER: &str = "à nhầm,";
pub const OVERLAP_PREFIX: &str = "[overlap:";
pub const TRUNCATION_MARKER: &str = "…";
pub const NOISE_MARKERS: [&str; 3] = ["[noise]", "[static]", "[inaudible]"];

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("noise rate {name} = {value} is outside [0, 1]")]
pub struct NoiseRateError {
    pub name: &'static str,
    pub value: f64,
}

/// Per-phenomenon injection probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    /// Per customer turn.
    pub disfluency_rate: f64,
    /// Per adjacent turn pair.
    pub overlap_rate: f64,
    pub fragment_rate: f64,
    pub noise_marker_rate: f64,
}

impl NoiseProfile {
    pub fn none() -> Self {
        NoiseProfile::default()
    }

    /// Moderate rates used by the shipped simulation config.
    pub fn moderate() -> Self {
        NoiseProfile {
            disfluency_rate: 0.3,
            overlap_rate: 0.1,
            fragment_rate: 0.1,
            noise_marker_rate: 0.15,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseRateError> {
        for (name, value) in [
            ("disfluency_rate", self.disfluency_rate),
            ("overlap_rate", self.overlap_rate),
            ("fragment_rate", self.fragment_rate),
            ("noise_marker_rate", self.noise_marker_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(NoiseRateError { name, value });
            }
        }
        Ok(())
    }

    pub(crate) fn without_disfluency(self) -> Self {
        NoiseProfile {
            disfluency_rate: 0.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disfluency {
    Hesitation,
    Repetition,
    SelfCorrection,
}

impl Disfluency {
    pub const ALL: [Disfluency; 3] = [
        Disfluency::Hesitation,
        Disfluency::Repetition,
        Disfluency::SelfCorrection,
    ];

    /// Applies this disfluency. Hesitations go at `position` (a word boundary,
    /// clamped to the word count); the other kinds act on the leading token.
    pub fn apply(self, text: &str, position: usize, hesitation: &str) -> String {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return text.to_string();
        }
        let mut out: Vec<&str> = Vec::with_capacity(words.len() + 3);
        match self {
            Disfluency::Hesitation => {
                let at = position.min(words.len());
                out.extend(&words[..at]);
                out.push(hesitation);
                out.extend(&words[at..]);
            }
            Disfluency::Repetition => {
                out.push(words[0]);
                out.extend(&words);
            }
            Disfluency::SelfCorrection => {
                out.push(words[0]);
                out.extend(SELF_CORRECTION_MARKER.split(' '));
                out.extend(&words);
            }
        }
        out.join(" ")
    }
}

/// Keeps the first `keep` words and appends the truncation marker.
pub fn truncate_words(text: &str, keep: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let keep = keep.clamp(1, words.len().max(1));
    let mut out = words[..keep.min(words.len())].join(" ");
    out.push(' ');
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Overlap span quoting up to the first two words of the following turn.
pub fn overlap_span(next_text: &str) -> String {
    let head: Vec<&str> = next_text.split_whitespace().take(2).collect();
    format!("{OVERLAP_PREFIX} {}]", head.join(" "))
}

fn insert_at(text: &str, position: usize, token: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let at = position.min(words.len());
    words.insert(at, token);
    words.join(" ")
}

/// Applies fragment, disfluency and background-noise injection to one
/// utterance. Overlap is pairwise and handled by the caller.
pub fn inject_noise<R: Rng + ?Sized>(text: &str, noise: &NoiseProfile, rng: &mut R) -> String {
    inject_noise_protected(text, 0, noise, rng)
}

/// As [`inject_noise`], but a fragment cut never removes any of the first
/// `protected_words` words. When no cut point remains, no fragment is made.
pub(crate) fn inject_noise_protected<R: Rng + ?Sized>(
    text: &str,
    protected_words: usize,
    noise: &NoiseProfile,
    rng: &mut R,
) -> String {
    let word_count = text.split_whitespace().count();
    if word_count == 0 {
        return text.to_string();
    }
    let mut out = text.to_string();

    if rng.random_bool(noise.fragment_rate) {
        let min_keep = protected_words.max(1);
        if min_keep < word_count {
            let keep = rng.random_range(min_keep..word_count);
            out = truncate_words(&out, keep);
        }
    }

    if rng.random_bool(noise.disfluency_rate) {
        let kind = Disfluency::ALL[rng.random_range(0..Disfluency::ALL.len())];
        let boundary = rng.random_range(0..=out.split_whitespace().count());
        let token = HESITATION_TOKENS[rng.random_range(0..HESITATION_TOKENS.len())];
        out = kind.apply(&out, boundary, token);
    }

    if rng.random_bool(noise.noise_marker_rate) {
        let boundary = rng.random_range(0..=out.split_whitespace().count());
        let marker = NOISE_MARKERS[rng.random_range(0..NOISE_MARKERS.len())];
        out = insert_at(&out, boundary, marker);
    }

    out
}

/// True when `text` shows a hesitation, repetition or self-correction.
pub fn has_disfluency(text: &str) -> bool {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.iter().any(|t| HESITATION_TOKENS.contains(t)) {
        return true;
    }
    if text.contains(SELF_CORRECTION_MARKER) {
        return true;
    }
    tokens.windows(2).any(|pair| pair[0] == pair[1])
}

/// True when `text` contains any marker from the inventory.
pub fn has_any_marker(text: &str) -> bool {
    has_disfluency(text)
        || text.contains(OVERLAP_PREFIX)
        || text.contains(TRUNCATION_MARKER)
        || NOISE_MARKERS.iter().any(|m| text.contains(m))
}
