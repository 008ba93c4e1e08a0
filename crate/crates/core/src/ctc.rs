//! The CTC core: negative log-likelihood over all monotonic alignments via
//! log-space forward/backward recursions, the exact gradient with respect
//! to the logits, and greedy decoding with collapse.
//!
//! Conventions: blank is index 0, alpha at frame `t` includes the emission
//! of frame `t`, beta excludes it, so `P = sum_s alpha_t(s) * beta_t(s)`
//! holds at every frame.

use thiserror::Error;

use crate::labels::{TargetSequence, Vocabulary};
use crate::mat::Mat;

/// Output frame rate of the encoder, frames per second.
pub const FRAME_RATE: f64 = 50.0;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("target of length {target_len} (with {repeats} adjacent repeats) needs at least {needed} frames, got {frames}")]
    InfeasibleTarget {
        frames: usize,
        target_len: usize,
        repeats: usize,
        needed: usize,
    },
    #[error("logits contain NaN or infinity")]
    NonFiniteInput,
    #[error("target token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
}

/// Unnormalized per-frame scores, one row per frame, one column per token.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLogits {
    pub values: Mat,
    pub frame_rate: f64,
}

impl FrameLogits {
    pub fn new(values: Mat) -> Self {
        FrameLogits {
            values,
            frame_rate: FRAME_RATE,
        }
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.cols()
    }
}

/// Target with blanks interleaved: `[blank, y1, blank, ..., yL, blank]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedTarget {
    ext_ids: Vec<usize>,
}

impl ExtendedTarget {
    pub fn new(target: &TargetSequence) -> Self {
        let mut ext_ids = Vec::with_capacity(2 * target.len() + 1);
        ext_ids.push(Vocabulary::BLANK_INDEX);
        for &id in target.token_ids() {
            ext_ids.push(id);
            ext_ids.push(Vocabulary::BLANK_INDEX);
        }
        ExtendedTarget { ext_ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ext_ids
    }

    pub fn len(&self) -> usize {
        self.ext_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ext_ids.is_empty()
    }

    /// Drops the interleaved blanks, recovering the plain target ids.
    pub fn strip(&self) -> Vec<usize> {
        self.ext_ids
            .iter()
            .copied()
            .filter(|&id| id != Vocabulary::BLANK_INDEX)
            .collect()
    }
}

/// Loss and exact gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CtcResult {
    /// Negative log-likelihood in nats.
    pub loss: f64,
    /// Same shape as the logits; each row sums to zero.
    pub grad: Mat,
}

/// Number of adjacent equal pairs in the target; every such pair forces a
/// blank frame between the repeats.
fn adjacent_repeats(target: &TargetSequence) -> usize {
    target.token_ids().windows(2).filter(|w| w[0] == w[1]).count()
}

/// True when `frames` suffice to emit the target: `T >= L + repeats`.
pub fn ctc_feasible(frames: usize, target: &TargetSequence) -> bool {
    frames >= target.len() + adjacent_repeats(target)
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Row-wise log-softmax.
fn log_softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// CTC negative log-likelihood and gradient for one utterance.
pub fn ctc_loss_grad(
    logits: &FrameLogits,
    target: &TargetSequence,
    blank: usize,
) -> Result<CtcResult, CtcError> {
    assert_eq!(blank, Vocabulary::BLANK_INDEX, "blank is fixed at index 0");
    let frames = logits.frames();
    let vocab = logits.vocab_size();

    if !logits.values.all_finite() {
        return Err(CtcError::NonFiniteInput);
    }
    if let Some(&token) = target.token_ids().iter().find(|&&t| t >= vocab) {
        return Err(CtcError::TokenOutOfRange { token, vocab });
    }
    if !ctc_feasible(frames, target) {
        let repeats = adjacent_repeats(target);
        return Err(CtcError::InfeasibleTarget {
            frames,
            target_len: target.len(),
            repeats,
            needed: target.len() + repeats,
        });
    }

    let lp = log_softmax(&logits.values);
    let ext = ExtendedTarget::new(target);
    let ids = ext.ids();
    let s_len = ids.len();

    // Transition `s-2 -> s` is legal only across distinct non-blank labels.
    let skip_ok: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ids[s] != blank && ids[s] != ids[s - 2])
        .collect();

    let mut alpha = Mat::filled(frames, s_len, f64::NEG_INFINITY);
    alpha.set(0, 0, lp.get(0, ids[0]));
    if s_len > 1 {
        alpha.set(0, 1, lp.get(0, ids[1]));
    }
    for t in 1..frames {
        for s in 0..s_len {
            let stay = alpha.get(t - 1, s);
            let step = if s >= 1 { alpha.get(t - 1, s - 1) } else { f64::NEG_INFINITY };
            let skip = if skip_ok[s] { alpha.get(t - 1, s - 2) } else { f64::NEG_INFINITY };
            let acc = log_sum_exp3(stay, step, skip);
            if acc > f64::NEG_INFINITY {
                alpha.set(t, s, acc + lp.get(t, ids[s]));
            }
        }
    }

    let log_p = log_sum_exp2(
        alpha.get(frames - 1, s_len - 1),
        if s_len >= 2 { alpha.get(frames - 1, s_len - 2) } else { f64::NEG_INFINITY },
    );
    debug_assert!(log_p > f64::NEG_INFINITY);
    let loss = -log_p;

    let mut beta = Mat::filled(frames, s_len, f64::NEG_INFINITY);
    beta.set(frames - 1, s_len - 1, 0.0);
    if s_len >= 2 {
        beta.set(frames - 1, s_len - 2, 0.0);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let stay = beta.get(t + 1, s) + lp.get(t + 1, ids[s]);
            let step = if s + 1 < s_len {
                beta.get(t + 1, s + 1) + lp.get(t + 1, ids[s + 1])
            } else {
                f64::NEG_INFINITY
            };
            let skip = if s + 2 < s_len && skip_ok[s + 2] {
                beta.get(t + 1, s + 2) + lp.get(t + 1, ids[s + 2])
            } else {
                f64::NEG_INFINITY
            };
            beta.set(t, s, log_sum_exp3(stay, step, skip));
        }
    }

    // grad[t][k] = softmax[t][k] - exp(log gamma[t][k] - log P), where
    // gamma accumulates alpha*beta over lattice states labelled k.
    let mut grad = Mat::zeros(frames, vocab);
    let mut gamma = vec![f64::NEG_INFINITY; vocab];
    for t in 0..frames {
        gamma.iter_mut().for_each(|g| *g = f64::NEG_INFINITY);
        for s in 0..s_len {
            let ab = alpha.get(t, s) + beta.get(t, s);
            if ab > f64::NEG_INFINITY {
                gamma[ids[s]] = log_sum_exp2(gamma[ids[s]], ab);
            }
        }
        let grad_row = grad.row_mut(t);
        let lp_row = lp.row(t);
        for k in 0..vocab {
            let expected = if gamma[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (gamma[k] - log_p).exp()
            };
            grad_row[k] = lp_row[k].exp() - expected;
        }
    }

    Ok(CtcResult { loss, grad })
}

/// Frame-wise argmax; ties resolve to the lowest index.
pub fn greedy_decode(logits: &FrameLogits) -> Vec<usize> {
    (0..logits.frames())
        .map(|t| {
            let row = logits.values.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// CTC collapse: merge consecutive duplicates, then delete blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &id in path {
        if prev != Some(id) {
            if id != blank {
                out.push(id);
            }
            prev = Some(id);
        }
    }
    out
}
