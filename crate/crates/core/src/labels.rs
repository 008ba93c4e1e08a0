//! Target preparation: the vocabulary over dialect tags and the repeated-tag
//! CTC targets, with word counts from either the speech-rate heuristic or a
//! stored exact count.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Utterance;
use crate::vad::{detect_speech, VadConfig};

pub const BLANK_TOKEN: &str = "<blank>";
pub const SPACE_TOKEN: &str = "<sp>";

/// Default speech rate for the heuristic, words per second.
pub const DEFAULT_RATE_WPS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("no speech detected in utterance {0:?}")]
    NoSpeechDetected(String),
    #[error("utterance {id:?} has dialect {dialect:?} which is not in the vocabulary")]
    UnknownDialect { id: String, dialect: String },
    #[error("no stored word count for utterance {0:?}")]
    MissingWordCount(String),
    #[error("vocabulary has no space token but spaces were requested")]
    SpaceTokenMissing,
    #[error("dialect tags must be distinct and distinct from {BLANK_TOKEN:?}/{SPACE_TOKEN:?}: {0:?}")]
    BadDialectTag(String),
    #[error("targets file line {line}: {detail}")]
    InvalidTargetsFile { line: usize, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Token inventory: blank at index 0, optional space next, then dialect tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    space_index: Option<usize>,
    dialect_indices: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub const BLANK_INDEX: usize = 0;

    pub fn from_dialects<S: AsRef<str>>(dialects: &[S], with_space: bool) -> Result<Self, LabelError> {
        let mut tokens = vec![BLANK_TOKEN.to_string()];
        let space_index = if with_space {
            tokens.push(SPACE_TOKEN.to_string());
            Some(1)
        } else {
            None
        };
        let mut dialect_indices = BTreeMap::new();
        for d in dialects {
            let tag = d.as_ref();
            if tag.is_empty() || tag == BLANK_TOKEN || tag == SPACE_TOKEN {
                return Err(LabelError::BadDialectTag(tag.to_string()));
            }
            if dialect_indices.insert(tag.to_string(), tokens.len()).is_some() {
                return Err(LabelError::BadDialectTag(tag.to_string()));
            }
            tokens.push(tag.to_string());
        }
        Ok(Vocabulary {
            tokens,
            space_index,
            dialect_indices,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn space_index(&self) -> Option<usize> {
        self.space_index
    }

    pub fn dialect_index(&self, tag: &str) -> Option<usize> {
        self.dialect_indices.get(tag).copied()
    }

    /// Dialect tags in index order.
    pub fn dialects(&self) -> Vec<String> {
        let first = 1 + usize::from(self.space_index.is_some());
        self.tokens[first..].to_vec()
    }

    pub fn is_dialect(&self, index: usize) -> bool {
        index > usize::from(self.space_index.is_some()) && index < self.tokens.len()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }
}

/// The repeated-tag CTC target, blank-free, length >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    token_ids: Vec<usize>,
}

impl TargetSequence {
    pub fn new(token_ids: Vec<usize>) -> Result<Self, LabelError> {
        if token_ids.is_empty() {
            return Err(LabelError::InvalidTargetsFile {
                line: 0,
                detail: "empty target".into(),
            });
        }
        if token_ids.contains(&Vocabulary::BLANK_INDEX) {
            return Err(LabelError::InvalidTargetsFile {
                line: 0,
                detail: "target contains the blank index".into(),
            });
        }
        Ok(TargetSequence { token_ids })
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Where per-utterance word counts come from.
#[derive(Debug, Clone)]
pub enum WordCountProvider {
    /// `w = round(rate_wps * d)` with a floor of one word when speech exists.
    Lah { rate_wps: f64 },
    /// Stored exact counts keyed by utterance id.
    Exact(BTreeMap<String, usize>),
}

impl WordCountProvider {
    pub fn lah(rate_wps: f64) -> Self {
        assert!(rate_wps > 0.0, "rate must be positive");
        WordCountProvider::Lah { rate_wps }
    }
}

impl Default for WordCountProvider {
    fn default() -> Self {
        WordCountProvider::Lah {
            rate_wps: DEFAULT_RATE_WPS,
        }
    }
}

/// Word count from detected speech duration: round-half-up of `rate * d`,
/// never less than 1 while any speech is present.
pub fn words_from_duration(rate_wps: f64, speech_s: f64) -> usize {
    ((rate_wps * speech_s + 0.5).floor() as usize).max(1)
}

/// Estimates the word count with the built-in energy detector.
pub fn estimate_word_count(
    utterance: &Utterance,
    provider: &WordCountProvider,
    vad_config: &VadConfig,
) -> Result<usize, LabelError> {
    let detector = crate::vad::EnergyVad {
        config: vad_config.clone(),
    };
    estimate_word_count_with(utterance, provider, &detector)
}

/// Estimates the word count with any [`SpeechDetector`](crate::vad::SpeechDetector),
/// so a heavier detector can replace the energy one without touching target
/// preparation.
pub fn estimate_word_count_with(
    utterance: &Utterance,
    provider: &WordCountProvider,
    detector: &dyn crate::vad::SpeechDetector,
) -> Result<usize, LabelError> {
    match provider {
        WordCountProvider::Lah { rate_wps } => {
            let d = detector.detect(utterance).total_speech_s;
            if d <= 0.0 {
                return Err(LabelError::NoSpeechDetected(utterance.id.clone()));
            }
            Ok(words_from_duration(*rate_wps, d))
        }
        WordCountProvider::Exact(counts) => {
            let count = *counts
                .get(&utterance.id)
                .ok_or_else(|| LabelError::MissingWordCount(utterance.id.clone()))?;
            if count == 0 {
                return Err(LabelError::NoSpeechDetected(utterance.id.clone()));
            }
            Ok(count)
        }
    }
}

/// Builds the repeated-tag target: `tag x w`, or tag/space interleaved
/// (length `2w - 1`) when `insert_spaces` is set.
pub fn build_target(
    utterance: &Utterance,
    words: usize,
    vocab: &Vocabulary,
    insert_spaces: bool,
) -> Result<TargetSequence, LabelError> {
    assert!(words >= 1, "word count must be at least 1");
    let dialect = utterance.dialect.as_deref().unwrap_or("");
    let tag_index = vocab
        .dialect_index(dialect)
        .ok_or_else(|| LabelError::UnknownDialect {
            id: utterance.id.clone(),
            dialect: dialect.to_string(),
        })?;

    let token_ids = if insert_spaces {
        let space = vocab.space_index().ok_or(LabelError::SpaceTokenMissing)?;
        let mut ids = Vec::with_capacity(2 * words - 1);
        for i in 0..words {
            if i > 0 {
                ids.push(space);
            }
            ids.push(tag_index);
        }
        ids
    } else {
        vec![tag_index; words]
    };
    TargetSequence::new(token_ids)
}

// ── Prepared-targets file ────────────────────────────────────────────────

/// One line of the prepared-targets JSONL:
/// `{"id": "...", "target": [ints], "w": int, "d": float}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreparedTarget {
    pub id: String,
    pub target: Vec<usize>,
    pub w: usize,
    pub d: f64,
}

/// Utterances skipped during preparation, with the reason.
#[derive(Debug, Clone)]
pub struct SkippedUtterance {
    pub id: String,
    pub reason: String,
}

/// Prepares targets for a labeled corpus. Utterances without detectable
/// speech are skipped and reported; structural problems (unknown dialect,
/// missing stored count) are hard errors.
pub fn prepare_targets(
    utterances: &[Utterance],
    provider: &WordCountProvider,
    vocab: &Vocabulary,
    vad_config: &VadConfig,
    insert_spaces: bool,
) -> Result<(Vec<PreparedTarget>, Vec<SkippedUtterance>), LabelError> {
    let mut prepared = Vec::with_capacity(utterances.len());
    let mut skipped = Vec::new();
    for utt in utterances {
        let d = detect_speech(utt, vad_config).total_speech_s;
        let words = match provider {
            WordCountProvider::Lah { rate_wps } if d > 0.0 => words_from_duration(*rate_wps, d),
            WordCountProvider::Lah { .. } => 0,
            WordCountProvider::Exact(counts) => *counts
                .get(&utt.id)
                .ok_or_else(|| LabelError::MissingWordCount(utt.id.clone()))?,
        };
        if words == 0 {
            skipped.push(SkippedUtterance {
                id: utt.id.clone(),
                reason: "no speech detected".into(),
            });
            continue;
        }
        let target = build_target(utt, words, vocab, insert_spaces)?;
        prepared.push(PreparedTarget {
            id: utt.id.clone(),
            target: target.token_ids().to_vec(),
            w: words,
            d,
        });
    }
    Ok((prepared, skipped))
}

pub fn write_targets(path: &Path, targets: &[PreparedTarget]) -> Result<(), LabelError> {
    let mut out = String::new();
    for t in targets {
        out.push_str(&serde_json::to_string(t).expect("target serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_targets(path: &Path) -> Result<Vec<PreparedTarget>, LabelError> {
    let file = std::fs::File::open(path)?;
    let mut targets = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: PreparedTarget =
            serde_json::from_str(&line).map_err(|e| LabelError::InvalidTargetsFile {
                line: i + 1,
                detail: e.to_string(),
            })?;
        TargetSequence::new(t.target.clone()).map_err(|_| LabelError::InvalidTargetsFile {
            line: i + 1,
            detail: "target must be non-empty and blank-free".into(),
        })?;
        targets.push(t);
    }
    Ok(targets)
}
