//! Utterance-level post-processing: turn a collapsed token sequence into a
//! single dialect prediction by majority vote.

use std::collections::BTreeMap;

use crate::labels::Vocabulary;

/// Label reported when the decode carries no dialect evidence.
pub const UNKNOWN_LABEL: &str = "unknown";

/// Majority-vote outcome over one decoded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Winning dialect tag, or `None` for an empty decode.
    pub dialect: Option<String>,
    pub token_histogram: BTreeMap<String, usize>,
    pub decoded_length: usize,
}

impl Prediction {
    pub fn label(&self) -> &str {
        self.dialect.as_deref().unwrap_or(UNKNOWN_LABEL)
    }

    pub fn is_unknown(&self) -> bool {
        self.dialect.is_none()
    }
}

/// Counts dialect tokens in a collapsed decode and returns the most
/// frequent; ties break toward the earliest first occurrence. Space tokens
/// are ignored; an empty decode maps to the unknown outcome.
pub fn majority_vote(decoded: &[usize], vocab: &Vocabulary) -> Prediction {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // idx -> (count, first_pos)
    for (pos, &id) in decoded.iter().enumerate() {
        if !vocab.is_dialect(id) {
            continue;
        }
        counts.entry(id).or_insert((0, pos)).0 += 1;
    }

    let winner = counts
        .iter()
        .map(|(&id, &(count, first))| (id, count, first))
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(id, _, _)| id);

    let token_histogram = counts
        .iter()
        .map(|(&id, &(count, _))| (vocab.token(id).unwrap_or("?").to_string(), count))
        .collect();

    Prediction {
        dialect: winner.and_then(|id| vocab.token(id).map(str::to_string)),
        token_histogram,
        decoded_length: decoded.len(),
    }
}
