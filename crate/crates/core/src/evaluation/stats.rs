//! Corpus statistics.

use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::model::Conversation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_conversations: u64,
    pub n_turns: u64,
    /// `n_turns / n_conversations` rounded half-up to one decimal; `None`
    /// for an empty corpus.
    pub turns_per_conversation: Option<String>,
}

impl CorpusStats {
    pub fn from_counts(n_conversations: u64, n_turns: u64) -> Self {
        CorpusStats {
            n_conversations,
            n_turns,
            turns_per_conversation: Fraction::new(n_turns, n_conversations).map(|f| f.round_half_up(1)),
        }
    }

    /// Exact mean turns per conversation.
    pub fn mean_turns(&self) -> Option<Fraction> {
        Fraction::new(self.n_turns, self.n_conversations)
    }
}

pub fn corpus_stats(corpus: &[Conversation]) -> CorpusStats {
    let turns: usize = corpus.iter().map(|c| c.turns.len()).sum();
    CorpusStats::from_counts(corpus.len() as u64, turns as u64)
}
