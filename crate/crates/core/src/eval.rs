//! Metrics and experiment runners: weighted F1 over a confusion matrix,
//! duration-binned robustness reports, the chunk-by-context streaming
//! sweep, and the heuristic-vs-exact target-preparation comparison.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Utterance;
use crate::ctc::{collapse, greedy_decode};
use crate::decode::{majority_vote, Prediction};
use crate::encoder::{
    forward, prepare_examples, train, Checkpoint, EncoderConfig, FeatureError, FeatureExtractor,
    TrainConfig, TrainError,
};
use crate::labels::{prepare_targets, LabelError, Vocabulary, WordCountProvider};
use crate::par::par_map;
use crate::streaming::{stream_predict, StreamConfig, StreamError};
use crate::vad::VadConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("reference dialect {0:?} is not in the vocabulary")]
    UnknownReference(String),
    #[error("utterance {0:?} has no dialect tag; cannot score")]
    MissingReference(String),
    #[error("bad thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Reference-by-predicted counts; the extra trailing column collects
/// predictions that decoded to nothing ("unknown").
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    dialects: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(dialects: Vec<String>) -> Self {
        let n = dialects.len();
        ConfusionMatrix {
            dialects,
            counts: vec![vec![0; n + 1]; n],
        }
    }

    pub fn dialects(&self) -> &[String] {
        &self.dialects
    }

    fn index_of(&self, tag: &str) -> Option<usize> {
        self.dialects.iter().position(|d| d == tag)
    }

    pub fn record(&mut self, reference: &str, prediction: &Prediction) -> Result<(), EvalError> {
        let row = self
            .index_of(reference)
            .ok_or_else(|| EvalError::UnknownReference(reference.to_string()))?;
        let col = match &prediction.dialect {
            Some(tag) => self
                .index_of(tag)
                .ok_or_else(|| EvalError::UnknownReference(tag.clone()))?,
            None => self.dialects.len(),
        };
        self.counts[row][col] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, reference: usize, predicted: usize) -> usize {
        self.counts[reference][predicted]
    }

    pub fn unknown_count(&self) -> usize {
        let last = self.dialects.len();
        self.counts.iter().map(|row| row[last]).sum()
    }
}

/// Support-weighted mean of per-class F1. A class with undefined precision
/// or recall contributes an F1 of zero; unknown predictions earn no class
/// any true positives.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.dialects.len();
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut weighted = 0.0;
    for class in 0..n {
        let support: usize = cm.counts[class].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = cm.counts[class][class];
        let predicted: usize = (0..n).map(|r| cm.counts[r][class]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = tp as f64 / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += support as f64 / total as f64 * f1;
    }
    Ok(weighted)
}

/// Batch (full-utterance) prediction for one utterance.
pub fn predict_batch(ckpt: &Checkpoint, utterance: &Utterance) -> Result<Prediction, EvalError> {
    let extractor = FeatureExtractor::new(&ckpt.feature);
    let features = extractor.extract(&utterance.samples)?;
    let logits = forward(&ckpt.params, &features);
    let decoded = collapse(&greedy_decode(&logits), Vocabulary::BLANK_INDEX);
    Ok(majority_vote(&decoded, &ckpt.vocab))
}

fn reference_of(utterance: &Utterance) -> Result<&str, EvalError> {
    utterance
        .dialect
        .as_deref()
        .ok_or_else(|| EvalError::MissingReference(utterance.id.clone()))
}

/// Scores the test set with full-utterance inference.
pub fn evaluate_batch(
    ckpt: &Checkpoint,
    test: &[Utterance],
    threads: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let predictions = par_map(test, threads, |utt| predict_batch(ckpt, utt));
    let mut cm = ConfusionMatrix::new(ckpt.vocab.dialects());
    for (utt, prediction) in test.iter().zip(predictions) {
        cm.record(reference_of(utt)?, &prediction?)?;
    }
    Ok(cm)
}

/// Scores the test set with chunked streaming inference.
pub fn evaluate_streaming(
    ckpt: &Checkpoint,
    test: &[Utterance],
    cfg: &StreamConfig,
    threads: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let predictions = par_map(test, threads, |utt| {
        stream_predict(utt, &ckpt.params, &ckpt.feature, cfg, &ckpt.vocab)
    });
    let mut cm = ConfusionMatrix::new(ckpt.vocab.dialects());
    for (utt, prediction) in test.iter().zip(predictions) {
        cm.record(reference_of(utt)?, &prediction?)?;
    }
    Ok(cm)
}

// ── Duration-binned robustness report ────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DurationBin {
    pub threshold_s: f64,
    pub utterances: usize,
    pub weighted_f1: f64,
    /// `(f1_all - f1_bin) / f1_all`; zero when the bin covers everything.
    pub relative_degradation: f64,
}

#[derive(Debug, Clone)]
pub struct DurationReport {
    pub f1_all: f64,
    pub bins: Vec<DurationBin>,
    /// Thresholds skipped because no utterance was short enough.
    pub skipped_thresholds: Vec<f64>,
}

/// `(f1_all - f1_bin) / f1_all`, or zero when there is nothing to degrade
/// from.
pub fn relative_degradation(f1_all: f64, f1_bin: f64) -> f64 {
    if f1_all > 0.0 {
        (f1_all - f1_bin) / f1_all
    } else {
        0.0
    }
}

/// Scores subsets `{duration <= threshold}` for each ascending threshold.
/// Inference runs once; bins re-score the cached predictions.
pub fn duration_bin_report(
    ckpt: &Checkpoint,
    test: &[Utterance],
    thresholds: &[f64],
    threads: usize,
) -> Result<DurationReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidThresholds(
            "thresholds must be strictly ascending and non-empty".into(),
        ));
    }
    let max_duration = test.iter().map(|u| u.duration_s()).fold(0.0, f64::max);
    let top = *thresholds.last().unwrap();
    if top < max_duration {
        return Err(EvalError::InvalidThresholds(format!(
            "largest threshold {top}s must cover the longest utterance ({max_duration:.2}s)"
        )));
    }

    let predictions = par_map(test, threads, |utt| predict_batch(ckpt, utt));
    let mut scored = Vec::with_capacity(test.len());
    for (utt, prediction) in test.iter().zip(predictions) {
        scored.push((utt.duration_s(), reference_of(utt)?.to_string(), prediction?));
    }

    let dialects = ckpt.vocab.dialects();
    let score_subset = |limit: f64| -> Result<Option<(usize, f64)>, EvalError> {
        let mut cm = ConfusionMatrix::new(dialects.clone());
        let mut n = 0usize;
        for (duration, reference, prediction) in &scored {
            if *duration <= limit {
                cm.record(reference, prediction)?;
                n += 1;
            }
        }
        if n == 0 {
            Ok(None)
        } else {
            Ok(Some((n, weighted_f1(&cm)?)))
        }
    };

    let (_, f1_all) = score_subset(f64::INFINITY)?.expect("test set is non-empty");
    let mut bins = Vec::new();
    let mut skipped = Vec::new();
    for &threshold in thresholds {
        match score_subset(threshold)? {
            None => skipped.push(threshold),
            Some((utterances, f1)) => {
                bins.push(DurationBin {
                    threshold_s: threshold,
                    utterances,
                    weighted_f1: f1,
                    relative_degradation: relative_degradation(f1_all, f1),
                });
            }
        }
    }
    Ok(DurationReport {
        f1_all,
        bins,
        skipped_thresholds: skipped,
    })
}

// ── Streaming sweep ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub chunk_s: f64,
    pub context_s: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn f1(&self, chunk_s: f64, context_s: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.chunk_s == chunk_s && c.context_s == context_s)
            .map(|c| c.weighted_f1)
    }
}

/// Evaluates streaming prediction over every (chunk, context) pair on the
/// identical test set and checkpoint. Cells are assembled in grid order.
pub fn run_sweep(
    ckpt: &Checkpoint,
    test: &[Utterance],
    chunks: &[f64],
    contexts: &[f64],
    threads: usize,
) -> Result<SweepResult, EvalError> {
    if chunks.is_empty() || contexts.is_empty() {
        return Err(EvalError::InvalidThresholds("empty sweep grid".into()));
    }
    let mut cells = Vec::with_capacity(chunks.len() * contexts.len());
    for &chunk_s in chunks {
        for &context_s in contexts {
            let cfg = StreamConfig::new(chunk_s, context_s)?;
            let cm = evaluate_streaming(ckpt, test, &cfg, threads)?;
            cells.push(SweepCell {
                chunk_s,
                context_s,
                weighted_f1: weighted_f1(&cm)?,
            });
        }
    }
    Ok(SweepResult { cells })
}

// ── Label-preparation comparison ─────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PrepRun {
    pub mode: String,
    pub weighted_f1: f64,
    pub skipped_utterances: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct LabelPrepReport {
    pub runs: Vec<PrepRun>,
}

/// Everything a comparison training run needs besides the data.
#[derive(Debug, Clone, Default)]
pub struct PrepContext {
    pub vad: VadConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub feature: crate::encoder::FeatureConfig,
}

fn run_one_prep(
    mode: &str,
    provider: &WordCountProvider,
    train_set: &[Utterance],
    test_set: &[Utterance],
    vocab: &Vocabulary,
    ctx: &PrepContext,
    threads: usize,
) -> Result<PrepRun, EvalError> {
    let (targets, skipped) = prepare_targets(train_set, provider, vocab, &ctx.vad, false)?;
    let examples = prepare_examples(train_set, &targets, &ctx.feature, threads)?;
    let report = train(
        &examples,
        vocab,
        &ctx.feature,
        &ctx.encoder,
        &ctx.train,
        threads,
        &mut |_| {},
    )?;
    let cm = evaluate_batch(&report.checkpoint, test_set, threads)?;
    Ok(PrepRun {
        mode: mode.to_string(),
        weighted_f1: weighted_f1(&cm)?,
        skipped_utterances: skipped.len(),
        final_loss: report.loss_log.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
    })
}

/// Trains two models that differ only in target preparation — the speech-
/// rate heuristic versus recorded exact word counts — and scores both on
/// the same test set.
pub fn compare_label_prep(
    train_set: &[Utterance],
    true_counts: &BTreeMap<String, usize>,
    test_set: &[Utterance],
    rate_wps: f64,
    ctx: &PrepContext,
    threads: usize,
) -> Result<LabelPrepReport, EvalError> {
    let mut dialects: Vec<String> = train_set
        .iter()
        .filter_map(|u| u.dialect.clone())
        .collect();
    dialects.sort();
    dialects.dedup();
    let vocab = Vocabulary::from_dialects(&dialects, false)?;

    let lah = run_one_prep(
        &format!("lah(rate={rate_wps})"),
        &WordCountProvider::lah(rate_wps),
        train_set,
        test_set,
        &vocab,
        ctx,
        threads,
    )?;
    let exact = run_one_prep(
        "exact",
        &WordCountProvider::Exact(true_counts.clone()),
        train_set,
        test_set,
        &vocab,
        ctx,
        threads,
    )?;
    Ok(LabelPrepReport {
        runs: vec![lah, exact],
    })
}

// ── Report writers ───────────────────────────────────────────────────────

fn write_with_note(path: &Path, note: &str, body: String) -> Result<(), EvalError> {
    let mut out = String::new();
    if !note.is_empty() {
        for line in note.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&body);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix, note: &str) -> Result<(), EvalError> {
    let mut body = String::from("reference");
    for d in cm.dialects() {
        body.push(',');
        body.push_str(d);
    }
    body.push_str(",unknown\n");
    for (r, d) in cm.dialects().iter().enumerate() {
        body.push_str(d);
        for c in 0..=cm.dialects().len() {
            body.push_str(&format!(",{}", cm.count(r, c)));
        }
        body.push('\n');
    }
    write_with_note(path, note, body)
}

pub fn write_duration_csv(path: &Path, report: &DurationReport, note: &str) -> Result<(), EvalError> {
    let mut header = String::from(
        "each row scores the subset of utterances with duration <= threshold_s;\n\
         relative_degradation = (f1_all - f1_bin) / f1_all\n",
    );
    header.push_str(&format!("f1_all = {:.6}", report.f1_all));
    if !note.is_empty() {
        header.push('\n');
        header.push_str(note);
    }
    let mut body = String::from("threshold_s,utterances,weighted_f1,relative_degradation\n");
    for bin in &report.bins {
        body.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            bin.threshold_s, bin.utterances, bin.weighted_f1, bin.relative_degradation
        ));
    }
    write_with_note(path, &header, body)
}

pub fn write_sweep_csv(path: &Path, sweep: &SweepResult, note: &str) -> Result<(), EvalError> {
    let mut header = String::from(
        "raw grid cells, no interpolation; every cell scored on the same test set and checkpoint",
    );
    if !note.is_empty() {
        header.push('\n');
        header.push_str(note);
    }
    let mut body = String::from("chunk_s,context_s,weighted_f1\n");
    for cell in &sweep.cells {
        body.push_str(&format!(
            "{},{},{:.6}\n",
            cell.chunk_s, cell.context_s, cell.weighted_f1
        ));
    }
    write_with_note(path, &header, body)
}

pub fn write_compare_csv(path: &Path, report: &LabelPrepReport, note: &str) -> Result<(), EvalError> {
    let mut body = String::from("prep,weighted_f1,skipped_utterances,final_loss\n");
    for run in &report.runs {
        body.push_str(&format!(
            "{},{:.6},{},{:.6}\n",
            run.mode, run.weighted_f1, run.skipped_utterances, run.final_loss
        ));
    }
    write_with_note(path, note, body)
}

pub fn write_duration_svg(path: &Path, report: &DurationReport) -> Result<(), EvalError> {
    let f1_points: Vec<(f64, f64)> = report
        .bins
        .iter()
        .map(|b| (b.threshold_s, b.weighted_f1))
        .collect();
    let degradation_points: Vec<(f64, f64)> = report
        .bins
        .iter()
        .map(|b| (b.threshold_s, b.relative_degradation))
        .collect();
    let svg = crate::plot::line_chart(
        "weighted F1 on utterances no longer than a threshold",
        "threshold (s)",
        "score",
        &[
            crate::plot::Series {
                name: "weighted F1".into(),
                points: f1_points,
            },
            crate::plot::Series {
                name: "relative degradation".into(),
                points: degradation_points,
            },
        ],
    );
    std::fs::write(path, svg)?;
    Ok(())
}

pub fn write_sweep_svg(path: &Path, sweep: &SweepResult) -> Result<(), EvalError> {
    let mut chunks: Vec<f64> = sweep.cells.iter().map(|c| c.chunk_s).collect();
    chunks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    chunks.dedup();
    let series: Vec<crate::plot::Series> = chunks
        .iter()
        .map(|&chunk| crate::plot::Series {
            name: format!("chunk {chunk}s"),
            points: sweep
                .cells
                .iter()
                .filter(|c| c.chunk_s == chunk)
                .map(|c| (c.context_s, c.weighted_f1))
                .collect(),
        })
        .collect();
    let svg = crate::plot::line_chart(
        "weighted F1 by left context for each chunk size",
        "left context (s)",
        "weighted F1",
        &series,
    );
    std::fs::write(path, svg)?;
    Ok(())
}

pub fn write_sweep_heatmap_svg(path: &Path, sweep: &SweepResult) -> Result<(), EvalError> {
    let mut chunks: Vec<f64> = sweep.cells.iter().map(|c| c.chunk_s).collect();
    chunks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    chunks.dedup();
    let mut contexts: Vec<f64> = sweep.cells.iter().map(|c| c.context_s).collect();
    contexts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    contexts.dedup();
    let values: Vec<Vec<f64>> = chunks
        .iter()
        .map(|&c| {
            contexts
                .iter()
                .map(|&l| sweep.f1(c, l).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let svg = crate::plot::heatmap(
        "weighted F1 by chunk and context",
        "left context (s)",
        "chunk (s)",
        &contexts,
        &chunks,
        &values,
    );
    std::fs::write(path, svg)?;
    Ok(())
}
