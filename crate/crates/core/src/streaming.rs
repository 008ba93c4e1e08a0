//! Pseudo-streaming inference over overlapping chunks: each `chunk_s`-second
//! stride is evaluated together with up to `context_s` seconds of preceding
//! audio, and only the frames belonging to the stride are kept.
//!
//! The chunk at `t = 0` has no audio before it, so nothing is trimmed there;
//! in general the trim count comes from the *actual* prepended context
//! (`t - start` samples) run through the feature hop arithmetic.

use thiserror::Error;

use crate::corpus::{Utterance, SAMPLE_RATE};
use crate::ctc::{collapse, greedy_decode, FrameLogits};
use crate::decode::{majority_vote, Prediction};
use crate::encoder::{forward, EncoderParams, FeatureConfig, FeatureExtractor};
use crate::labels::Vocabulary;
use crate::mat::Mat;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
}

/// Chunk and left-context durations, in seconds. Both must correspond to
/// whole sample counts at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    pub chunk_s: f64,
    pub context_s: f64,
}

impl StreamConfig {
    pub fn new(chunk_s: f64, context_s: f64) -> Result<Self, StreamError> {
        let cfg = StreamConfig { chunk_s, context_s };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if !self.chunk_s.is_finite() || self.chunk_s <= 0.0 {
            return Err(StreamError::InvalidConfig("chunk must be positive".into()));
        }
        if self.context_s < 0.0 {
            return Err(StreamError::InvalidConfig("context must be >= 0".into()));
        }
        for (name, seconds) in [("chunk", self.chunk_s), ("context", self.context_s)] {
            let samples = seconds * SAMPLE_RATE as f64;
            if (samples - samples.round()).abs() > 1e-6 {
                return Err(StreamError::InvalidConfig(format!(
                    "{name} of {seconds}s is not a whole number of samples"
                )));
            }
        }
        Ok(())
    }

    pub fn stride_samples(&self) -> usize {
        (self.chunk_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn context_samples(&self) -> usize {
        (self.context_s * SAMPLE_RATE as f64).round() as usize
    }
}

/// Accumulated stream output: retained frames in chunk order plus the
/// amount of audio consumed. Frames are append-only; chunks from one
/// stream must be pushed sequentially.
#[derive(Debug, Clone)]
pub struct StreamState {
    emitted_frames: Mat,
    consumed_samples: usize,
}

impl StreamState {
    pub fn new(vocab_size: usize) -> Self {
        StreamState {
            emitted_frames: Mat::zeros(0, vocab_size),
            consumed_samples: 0,
        }
    }

    pub fn push_chunk(&mut self, chunk: &ChunkOutput) {
        assert!(
            chunk.window.1 >= self.consumed_samples,
            "chunks must arrive in order"
        );
        self.emitted_frames.append_rows(&chunk.retained);
        self.consumed_samples = chunk.window.1;
    }

    pub fn emitted_frames(&self) -> &Mat {
        &self.emitted_frames
    }

    pub fn consumed_samples(&self) -> usize {
        self.consumed_samples
    }

    pub fn into_logits(self) -> FrameLogits {
        FrameLogits::new(self.emitted_frames)
    }

    /// Greedy decode + collapse + majority vote over everything so far.
    pub fn running_prediction(&self, vocab: &Vocabulary) -> Prediction {
        let logits = FrameLogits::new(self.emitted_frames.clone());
        let decoded = collapse(&greedy_decode(&logits), Vocabulary::BLANK_INDEX);
        majority_vote(&decoded, vocab)
    }
}

/// Per-chunk bookkeeping, mostly for the CLI and for equivalence tests.
#[derive(Debug, Clone)]
pub struct ChunkOutput {
    pub index: usize,
    /// Stride start, i.e. where new audio begins.
    pub stride_start: usize,
    /// Evaluation window in samples, context included.
    pub window: (usize, usize),
    /// Leading frames dropped as context.
    pub trimmed_frames: usize,
    /// Global feature-frame index of the first retained frame.
    pub first_frame: usize,
    pub retained: Mat,
}

/// Runs chunked inference and returns every chunk's retained logits.
/// A final window shorter than the feature analysis window yields a chunk
/// with zero retained frames.
pub fn stream_chunks(
    utterance: &Utterance,
    params: &EncoderParams,
    feature: &FeatureConfig,
    cfg: &StreamConfig,
) -> Result<Vec<ChunkOutput>, StreamError> {
    cfg.validate()?;
    assert!(!utterance.samples.is_empty(), "utterance must be non-empty");
    let stride = cfg.stride_samples();
    let context = cfg.context_samples();
    let total = utterance.samples.len();
    let hop = feature.hop_samples;
    let extractor = FeatureExtractor::new(feature);

    let mut chunks = Vec::new();
    let mut t = 0usize;
    let mut index = 0usize;
    while t < total {
        let start = t.saturating_sub(context);
        let end = (t + stride).min(total);
        let trim = (t - start) / hop;
        let window = &utterance.samples[start..end];
        let retained = match extractor.extract(window) {
            Ok(feats) => {
                let n = feats.rows();
                let logits = forward(params, &feats);
                if trim < n {
                    logits.values.row_range(trim, n)
                } else {
                    Mat::zeros(0, logits.values.cols())
                }
            }
            // Window shorter than the analysis window: no frames.
            Err(_) => Mat::zeros(0, params.arch().n_out),
        };
        chunks.push(ChunkOutput {
            index,
            stride_start: t,
            window: (start, end),
            trimmed_frames: trim,
            first_frame: start / hop + trim,
            retained,
        });
        index += 1;
        t += stride;
    }
    Ok(chunks)
}

/// Aggregated frame logits from chunked inference. Matches full-utterance
/// inference frame counts within one frame per chunk boundary.
pub fn stream_infer(
    utterance: &Utterance,
    params: &EncoderParams,
    feature: &FeatureConfig,
    cfg: &StreamConfig,
) -> Result<FrameLogits, StreamError> {
    let chunks = stream_chunks(utterance, params, feature, cfg)?;
    let mut state = StreamState::new(params.arch().n_out);
    for chunk in &chunks {
        state.push_chunk(chunk);
    }
    Ok(state.into_logits())
}

/// Full streaming prediction: greedy decode, collapse, majority vote.
pub fn stream_predict(
    utterance: &Utterance,
    params: &EncoderParams,
    feature: &FeatureConfig,
    cfg: &StreamConfig,
    vocab: &Vocabulary,
) -> Result<Prediction, StreamError> {
    let logits = stream_infer(utterance, params, feature, cfg)?;
    let decoded = collapse(&greedy_decode(&logits), Vocabulary::BLANK_INDEX);
    Ok(majority_vote(&decoded, vocab))
}
