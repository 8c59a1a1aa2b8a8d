//! Conversation-level train/validation splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::model::Conversation;

/// Whole conversations go to one side only; there is no turn-level unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: Fraction,
    pub seed: u64,
}

impl SplitSpec {
    /// 90/10 with the given seed.
    pub fn ninety_ten(seed: u64) -> Self {
        SplitSpec {
            train_fraction: Fraction::new(9, 10).expect("non-zero denominator"),
            seed,
        }
    }

    /// `round_half_up(train_fraction × n)`.
    pub fn train_size(&self, n: usize) -> usize {
        let f = self.train_fraction;
        let num = f.numerator() as u128 * n as u128;
        let den = f.denominator() as u128;
        ((2 * num + den) / (2 * den)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("corpus too small to split: {0} conversation(s), need at least 2")]
    TooSmall(usize),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(Fraction),
    #[error("split of {n} conversation(s) would leave {train} train / {valid} valid; both sides must be non-empty")]
    EmptySide { n: usize, train: usize, valid: usize },
    #[error("duplicate conversation id {0:?}")]
    DuplicateId(String),
}

/// Indices into the input, each side in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Splits ids by sorting them, shuffling under the seed and taking a prefix
/// as train. The outcome depends only on the id set and the spec, not on the
/// input order.
pub fn split_indices(ids: &[&str], spec: &SplitSpec) -> Result<SplitIndices, SplitError> {
    let f = spec.train_fraction;
    if f.numerator() == 0 || f.numerator() >= f.denominator() {
        return Err(SplitError::BadFraction(f));
    }
    let n = ids.len();
    if n < 2 {
        return Err(SplitError::TooSmall(n));
    }
    let train_n = spec.train_size(n);
    if train_n == 0 || train_n == n {
        return Err(SplitError::EmptySide {
            n,
            train: train_n,
            valid: n - train_n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
        return Err(SplitError::DuplicateId(ids[w[0]].to_string()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train: Vec<usize> = order[..train_n].to_vec();
    let mut valid: Vec<usize> = order[train_n..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok(SplitIndices { train, valid })
}

/// `(train, valid)` as owned conversations, each side in input order.
pub fn split_corpus(
    corpus: &[Conversation],
    spec: &SplitSpec,
) -> Result<(Vec<Conversation>, Vec<Conversation>), SplitError> {
    let ids: Vec<&str> = corpus.iter().map(|c| c.conversation_id.as_str()).collect();
    let split = split_indices(&ids, spec)?;
    let take = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok((take(&split.train), take(&split.valid)))
}

/// True when the two sides share no id and together cover `all`.
pub fn is_partition(all: &[&str], train: &[&str], valid: &[&str]) -> bool {
    let t: BTreeSet<&str> = train.iter().copied().collect();
    let v: BTreeSet<&str> = valid.iter().copied().collect();
    let a: BTreeSet<&str> = all.iter().copied().collect();
    t.is_disjoint(&v) && t.len() + v.len() == a.len() && t.union(&v).copied().collect::<BTreeSet<_>>() == a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Speaker, Turn};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("call-{i:05}")).collect()
    }

    #[test]
    fn ninety_ten_of_seventeen_thousand() {
        let owned = ids(17_000);
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        let split = split_indices(&refs, &SplitSpec::ninety_ten(3)).unwrap();
        assert_eq!((split.train.len(), split.valid.len()), (15_300, 1_700));
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let spec = SplitSpec::ninety_ten(0);
        assert_eq!(split_indices(&["a"], &spec), Err(SplitError::TooSmall(1)));
        assert_eq!(
            split_indices(&["a", "b"], &spec),
            Err(SplitError::EmptySide { n: 2, train: 2, valid: 0 })
        );
        assert_eq!(
            split_indices(&["a", "b", "a"], &SplitSpec { train_fraction: Fraction::new(1, 2).unwrap(), seed: 0 }),
            Err(SplitError::DuplicateId("a".into()))
        );
        let whole = SplitSpec { train_fraction: Fraction::new(1, 1).unwrap(), seed: 0 };
        assert!(matches!(split_indices(&["a", "b"], &whole), Err(SplitError::BadFraction(_))));
    }

    #[test]
    fn split_corpus_keeps_whole_conversations() {
        let corpus: Vec<Conversation> = (0..10)
            .map(|i| Conversation::new(format!("c{i}"), vec![Turn::new(0, Speaker::Agent, "a"), Turn::new(1, Speaker::Customer, "b")]))
            .collect();
        let (train, valid) = split_corpus(&corpus, &SplitSpec::ninety_ten(1)).unwrap();
        assert_eq!((train.len(), valid.len()), (9, 1));
        assert!(train.iter().chain(&valid).all(|c| c.turns.len() == 2));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_exhaustive_and_order_free(
            n in 2usize..300,
            num in 1u64..20,
            seed in any::<u64>(),
            rotate in 0usize..300,
        ) {
            let spec = SplitSpec { train_fraction: Fraction::new(num, 20).unwrap(), seed };
            let owned = ids(n);
            let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
            match split_indices(&refs, &spec) {
                Ok(split) => {
                    let train: Vec<&str> = split.train.iter().map(|&i| refs[i]).collect();
                    let valid: Vec<&str> = split.valid.iter().map(|&i| refs[i]).collect();
                    prop_assert!(is_partition(&refs, &train, &valid));
                    prop_assert_eq!(train.len(), spec.train_size(n));
                    let mut rotated = refs.clone();
                    rotated.rotate_left(rotate % n);
                    let again = split_indices(&rotated, &spec).unwrap();
                    let mut t2: Vec<&str> = again.train.iter().map(|&i| rotated[i]).collect();
                    let mut t1 = train.clone();
                    t1.sort();
                    t2.sort();
                    prop_assert_eq!(t1, t2);
                }
                Err(SplitError::EmptySide { train, valid, .. }) => {
                    prop_assert!(train == 0 || valid == 0);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
