//! Energy-based voice activity detection.
//!
//! Frames are classified against a noise floor estimated from a low
//! percentile of the utterance's own frame energies, so decisions are
//! invariant to recording gain. The scalar consumers care about is
//! [`SpeechSegments::total_speech_s`].

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VadConfig {
    pub frame_ms: u32,
    pub hop_ms: u32,
    /// Percentile of frame energies (in (0, 100)) taken as the noise floor.
    pub energy_floor_percentile: f64,
    /// A frame counts as speech when it exceeds the floor by this many dB.
    pub threshold_db_above_floor: f64,
    pub min_speech_ms: u32,
    pub min_pause_ms: u32,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 30,
            hop_ms: 10,
            energy_floor_percentile: 10.0,
            threshold_db_above_floor: 9.0,
            min_speech_ms: 90,
            min_pause_ms: 90,
        }
    }
}

impl VadConfig {
    fn assert_valid(&self) {
        assert!(self.hop_ms > 0, "hop_ms must be positive");
        assert!(self.frame_ms >= self.hop_ms, "frame_ms must be >= hop_ms");
        assert!(
            self.threshold_db_above_floor > 0.0,
            "threshold must be positive"
        );
        assert!(
            self.energy_floor_percentile > 0.0 && self.energy_floor_percentile < 100.0,
            "percentile must be in (0, 100)"
        );
    }
}

/// Detected speech intervals in seconds, sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSegments {
    pub segments: Vec<(f64, f64)>,
    pub total_speech_s: f64,
}

impl SpeechSegments {
    fn from_segments(segments: Vec<(f64, f64)>) -> Self {
        let total_speech_s = segments.iter().map(|(a, b)| b - a).sum();
        SpeechSegments {
            segments,
            total_speech_s,
        }
    }

    pub fn empty() -> Self {
        SpeechSegments {
            segments: Vec::new(),
            total_speech_s: 0.0,
        }
    }
}

/// Abstraction over speech-duration estimators, so the energy detector can
/// be swapped for a heavier model without touching target preparation.
pub trait SpeechDetector {
    fn detect(&self, utterance: &Utterance) -> SpeechSegments;
}

/// The built-in energy detector.
#[derive(Debug, Clone, Default)]
pub struct EnergyVad {
    pub config: VadConfig,
}

impl SpeechDetector for EnergyVad {
    fn detect(&self, utterance: &Utterance) -> SpeechSegments {
        detect_speech(utterance, &self.config)
    }
}

/// Nearest-rank-with-interpolation percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Detects speech frames and reports merged segments.
///
/// Boundary placement: a flagged frame only proves speech somewhere inside
/// its window, so run edges are estimated at the midpoint of the interval
/// the neighbouring un-flagged frame pins down. Runs touching the first or
/// last frame extend to the utterance edge.
pub fn detect_speech(utterance: &Utterance, config: &VadConfig) -> SpeechSegments {
    config.assert_valid();
    assert!(!utterance.samples.is_empty(), "utterance must be non-empty");

    let sr = utterance.sample_rate as usize;
    let win = sr * config.frame_ms as usize / 1000;
    let hop = sr * config.hop_ms as usize / 1000;
    let len = utterance.samples.len();
    if len < win {
        return SpeechSegments::empty();
    }
    let n_frames = (len - win) / hop + 1;

    // Mean-square frame energies on [-1, 1) samples.
    let mut energies = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let frame = &utterance.samples[i * hop..i * hop + win];
        let sum_sq: f64 = frame
            .iter()
            .map(|&s| {
                let v = s as f64 / 32768.0;
                v * v
            })
            .sum();
        energies.push(sum_sq / win as f64);
    }

    let max_energy = energies.iter().cloned().fold(0.0f64, f64::max);
    if max_energy <= 0.0 {
        return SpeechSegments::empty();
    }

    // dB relative to the loudest frame; exact-zero frames map to -inf.
    let dbs: Vec<f64> = energies
        .iter()
        .map(|&e| 10.0 * (e / max_energy).log10())
        .collect();
    let mut sorted = dbs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor_db = percentile(&sorted, config.energy_floor_percentile);
    let threshold = config.threshold_db_above_floor;

    // When the floor sits within the threshold of the peak the utterance has
    // no discernible quiet region: treat every non-silent frame as speech.
    let homogeneous = -floor_db < threshold;
    let speech: Vec<bool> = dbs
        .iter()
        .zip(&energies)
        .map(|(&db, &e)| {
            if e <= 0.0 {
                false
            } else if homogeneous {
                true
            } else {
                db >= floor_db + threshold
            }
        })
        .collect();

    // Frame runs -> sample intervals; a trailing sentinel closes open runs.
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, flag) in speech
        .iter()
        .copied()
        .chain(std::iter::once(false))
        .enumerate()
    {
        match (flag, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(first)) => {
                let last = i - 1;
                let start = if first == 0 {
                    0
                } else {
                    first * hop + win - hop / 2
                };
                let end = if last == n_frames - 1 {
                    len
                } else {
                    last * hop + hop / 2
                };
                if end > start {
                    intervals.push((start, end));
                }
                run_start = None;
            }
            _ => {}
        }
    }

    let min_speech = sr * config.min_speech_ms as usize / 1000;
    let min_pause = sr * config.min_pause_ms as usize / 1000;
    intervals.retain(|(a, b)| b - a >= min_speech);

    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (a, b) in intervals {
        match merged.last_mut() {
            Some((_, prev_end)) if a.saturating_sub(*prev_end) < min_pause => {
                *prev_end = (*prev_end).max(b);
            }
            _ => merged.push((a, b)),
        }
    }

    let sr_f = utterance.sample_rate as f64;
    SpeechSegments::from_segments(
        merged
            .into_iter()
            .map(|(a, b)| (a as f64 / sr_f, (b as f64 / sr_f).min(utterance.duration_s())))
            .collect(),
    )
}
