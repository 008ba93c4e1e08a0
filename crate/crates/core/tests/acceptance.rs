//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. The heavyweight pieces (the four-dialect corpus
//! and the trained model) are built once and shared.
//!
//! Run with `cargo test -p ctcdid --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use common::{brute_force_ctc_probability, seeded_logits};
use ctcdid::labels::words_from_duration;
use ctcdid::{
    ctc_loss_grad, duration_bin_report, estimate_word_count, evaluate_batch, evaluate_streaming,
    example_loss_and_grad, extract_features, forward, prepare_examples, prepare_targets,
    run_sweep, split_corpus, stream_chunks, stream_infer, synthesize_corpus_detailed, train,
    weighted_f1, Checkpoint, EncoderConfig, EncoderParams, FeatureConfig, FrameLogits,
    StreamConfig, SynthSpec, TargetSequence, TrainConfig, Utterance, VadConfig, Vocabulary,
    WordCountProvider,
};

const CORPUS_SEED: u64 = 20_250_101;
const SPLIT_SEED: u64 = 7;
const TRAIN_SEED: u64 = 11;
const THREADS: usize = 2;

fn acceptance_spec() -> SynthSpec {
    SynthSpec {
        dialects: vec!["A".into(), "B".into(), "C".into(), "D".into()],
        utterances_per_dialect: 250,
        duration_range_s: (2.0, 8.0),
        burst_range_s: (0.3, 0.6),
        pause_range_s: (0.15, 0.4),
        noise_level: 0.01,
        seed: CORPUS_SEED,
    }
}

struct Pipeline {
    checkpoint: Checkpoint,
    loss_log: Vec<(u64, f64)>,
    batch_f1: f64,
    stream_f1: f64,
    train_set: Vec<Utterance>,
    test_set: Vec<Utterance>,
    true_counts: BTreeMap<String, usize>,
    /// Wall time for target prep + training + both evaluations.
    run_seconds: f64,
}

/// The full criterion-6 pipeline: synth, split, heuristic targets, default
/// training, batch and streaming evaluation.
fn run_pipeline() -> Pipeline {
    let corpus = synthesize_corpus_detailed(&acceptance_spec()).expect("synth");
    let true_counts: BTreeMap<String, usize> = corpus
        .iter()
        .map(|s| (s.utterance.id.clone(), s.word_count))
        .collect();
    let utterances: Vec<Utterance> = corpus.into_iter().map(|s| s.utterance).collect();
    let (train_set, test_set) = split_corpus(utterances, 0.8, SPLIT_SEED).expect("split");
    assert_eq!(train_set.len(), 800);
    assert_eq!(test_set.len(), 200);

    let started = Instant::now();
    let vocab = Vocabulary::from_dialects(&["A", "B", "C", "D"], false).expect("vocab");
    let feature = FeatureConfig::default();
    let encoder = EncoderConfig::default();
    let (targets, skipped) = prepare_targets(
        &train_set,
        &WordCountProvider::lah(5.0),
        &vocab,
        &VadConfig::default(),
        false,
    )
    .expect("prepare");
    assert!(skipped.len() < 8, "{} utterances without speech", skipped.len());
    let examples = prepare_examples(&train_set, &targets, &feature, THREADS).expect("features");

    let cfg = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    assert!(cfg.max_steps <= 5000, "default training must stay under 5000 steps");
    let report = train(&examples, &vocab, &feature, &encoder, &cfg, THREADS, &mut |_| {})
        .expect("train");

    let batch_cm = evaluate_batch(&report.checkpoint, &test_set, THREADS).expect("batch eval");
    let batch_f1 = weighted_f1(&batch_cm).expect("batch f1");
    let stream_cfg = StreamConfig::new(1.0, 4.0).expect("stream config");
    let stream_cm =
        evaluate_streaming(&report.checkpoint, &test_set, &stream_cfg, THREADS).expect("stream eval");
    let stream_f1 = weighted_f1(&stream_cm).expect("stream f1");
    let run_seconds = started.elapsed().as_secs_f64();

    Pipeline {
        checkpoint: report.checkpoint,
        loss_log: report.loss_log,
        batch_f1,
        stream_f1,
        train_set,
        test_set,
        true_counts,
        run_seconds,
    }
}

static FIXTURE: OnceLock<Pipeline> = OnceLock::new();

fn fixture() -> &'static Pipeline {
    FIXTURE.get_or_init(run_pipeline)
}

fn random_target(seed: u64, len: usize, vocab: usize) -> Vec<usize> {
    let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(99);
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            1 + (state as usize % (vocab - 1))
        })
        .collect()
}

#[test]
fn criterion_1_ctc_oracle_equivalence() {
    let started = Instant::now();
    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    for frames in 1..=6usize {
        for vocab in 2..=4usize {
            for target_len in 1..=3.min(frames) {
                for seed in 0..100u64 {
                    let instance = (frames * 131 + vocab * 17 + target_len) as u64 * 1009 + seed;
                    let ids = random_target(instance, target_len, vocab);
                    let target = TargetSequence::new(ids.clone()).unwrap();
                    let logits = seeded_logits(frames, vocab, instance);
                    let expected = brute_force_ctc_probability(&logits, &ids, 0);
                    match ctc_loss_grad(&FrameLogits::new(logits), &target, 0) {
                        Ok(result) => {
                            assert!(expected > 0.0);
                            let got = (-result.loss).exp();
                            let rel = (got - expected).abs() / expected;
                            assert!(
                                rel <= 1e-9,
                                "T={frames} V={vocab} L={target_len} seed={seed}: rel {rel:e}"
                            );
                            worst_rel = worst_rel.max(rel);
                            checked += 1;
                        }
                        Err(_) => assert_eq!(expected, 0.0, "impl rejected a feasible target"),
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1}s");
    println!(
        "[criterion 1] PASS — {checked} instances vs exhaustive enumeration, \
         worst relative error {worst_rel:.2e}, {elapsed:.2}s"
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let eps = 1e-4;

    // CTC gradient alone, absolute tolerance 1e-5.
    let mut worst_ctc = 0.0f64;
    for case in 0..20u64 {
        let frames = 3 + (case % 4) as usize;
        let vocab = 3 + (case % 2) as usize;
        let ids = random_target(case * 7 + 3, 1 + (case as usize % 2), vocab);
        let target = TargetSequence::new(ids).unwrap();
        let base = seeded_logits(frames, vocab, 1234 + case);
        let analytic = ctc_loss_grad(&FrameLogits::new(base.clone()), &target, 0)
            .unwrap()
            .grad;
        for t in 0..frames {
            for k in 0..vocab {
                let mut plus = base.clone();
                plus.set(t, k, plus.get(t, k) + eps);
                let mut minus = base.clone();
                minus.set(t, k, minus.get(t, k) - eps);
                let lp = ctc_loss_grad(&FrameLogits::new(plus), &target, 0).unwrap().loss;
                let lm = ctc_loss_grad(&FrameLogits::new(minus), &target, 0).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * eps);
                let diff = (analytic.get(t, k) - numeric).abs();
                assert!(diff <= 1e-5, "case {case} [{t}][{k}]: |d| = {diff:e}");
                worst_ctc = worst_ctc.max(diff);
            }
        }
    }

    // End-to-end (encoder + CTC) against finite differences over the
    // parameters, relative tolerance 1e-4.
    let feature = FeatureConfig {
        n_bands: 5,
        ..FeatureConfig::default()
    };
    let encoder = EncoderConfig {
        hidden: 6,
        conv_width: 3,
        conv_stages: 1,
    };
    let mut worst_e2e = 0.0f64;
    for case in 0..20u64 {
        let frames = 6 + (case % 5) as usize; // T' <= 10
        let params = EncoderParams::init(&feature, &encoder, 3, 500 + case);
        let features = seeded_logits(frames, 5, 900 + case); // reused as feature rows
        let ids = random_target(case + 1, 1 + (case as usize % 3), 3);
        let target = TargetSequence::new(ids).unwrap();

        let (_, analytic) = example_loss_and_grad(&params, &features, &target).unwrap();
        let theta = params.flat();
        for i in 0..theta.len() {
            let mut probe = params.clone();
            let mut plus = theta.clone();
            plus[i] += eps;
            probe.set_flat(&plus);
            let (lp, _) = example_loss_and_grad(&probe, &features, &target).unwrap();
            let mut minus = theta.clone();
            minus[i] -= eps;
            probe.set_flat(&minus);
            let (lm, _) = example_loss_and_grad(&probe, &features, &target).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-2);
            assert!(
                rel <= 1e-4,
                "case {case} param {i}: analytic {} vs numeric {numeric} (rel {rel:e})",
                analytic[i]
            );
            worst_e2e = worst_e2e.max(rel);
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 took {elapsed:.1}s");
    println!(
        "[criterion 2] PASS — CTC grad worst |d| {worst_ctc:.2e} (tol 1e-5), \
         end-to-end worst rel {worst_e2e:.2e} (tol 1e-4), {elapsed:.2}s"
    );
}

#[test]
fn criterion_3_lah_rule_exact() {
    // round(5 d) with a floor of one word.
    let cases = [(0.2, 1usize), (1.0, 5), (2.0, 10), (3.7, 19)];
    for (d, expect) in cases {
        assert_eq!(words_from_duration(5.0, d), expect, "rule at d = {d}");
    }

    // Through the real detector: a full-scale tone is wall-to-wall speech,
    // so the detected duration is exactly the utterance duration.
    for (d, expect) in cases {
        let len = (d * 16_000.0).round() as usize;
        let samples: Vec<i16> = (0..len)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                (0.9 * (std::f64::consts::TAU * 1000.0 * t).sin() * 32767.0) as i16
            })
            .collect();
        let utt = Utterance::new(format!("tone{d}"), samples, None).unwrap();
        let got = estimate_word_count(&utt, &WordCountProvider::lah(5.0), &VadConfig::default())
            .unwrap();
        assert_eq!(got, expect, "detector path at d = {d}");
    }
    println!("[criterion 3] PASS — w = round(5d), floor 1, exact on d in {{0.2, 1.0, 2.0, 3.7}}");
}

fn random_utterance(seed: u64, min_s: f64, max_s: f64) -> Utterance {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(17);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let span = ((max_s - min_s) * 16_000.0) as u64;
    let len = (min_s * 16_000.0) as usize + (next() % span.max(1)) as usize;
    let samples: Vec<i16> = (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let tone = (std::f64::consts::TAU * (300.0 + (seed % 11) as f64 * 137.0) * t).sin();
            let noise = (next() >> 48) as i16 as f64 / 32768.0;
            ((0.35 * tone + 0.1 * noise) * 32767.0) as i16
        })
        .collect();
    Utterance::new(format!("rand{seed}"), samples, None).unwrap()
}

#[test]
fn criterion_4_streaming_degenerate_equivalence() {
    let feature = FeatureConfig::default();
    let encoder = EncoderConfig::default();
    let params = EncoderParams::init(&feature, &encoder, 5, 404);
    for seed in 0..20u64 {
        let utt = random_utterance(seed, 0.6, 3.0);
        let cfg = StreamConfig::new(utt.duration_s().ceil().max(1.0), 0.0).unwrap();
        let streamed = stream_infer(&utt, &params, &feature, &cfg).unwrap();
        let batch = forward(&params, &extract_features(&utt, &feature).unwrap());
        assert_eq!(streamed.values, batch.values, "utterance {seed}");
    }
    println!(
        "[criterion 4] PASS — single-chunk streaming bit-equal to batch on 20 random utterances"
    );
}

#[test]
fn criterion_5_streaming_context_sufficiency() {
    let feature = FeatureConfig::default();
    let encoder = EncoderConfig::default();
    let params = EncoderParams::init(&feature, &encoder, 5, 505);
    let halo = (params.receptive_field_frames() - 1) / 2;
    let cfg = StreamConfig::new(1.0, 0.5).unwrap();
    assert!(cfg.context_samples() / feature.hop_samples >= halo);

    let mut interior_total = 0usize;
    for seed in 100..110u64 {
        let utt = random_utterance(seed, 2.5, 5.0);
        let batch = forward(&params, &extract_features(&utt, &feature).unwrap());
        let chunks = stream_chunks(&utt, &params, &feature, &cfg).unwrap();
        let total = utt.samples.len();
        for chunk in &chunks {
            let (start, end) = chunk.window;
            let chunk_frames = feature.frames_for(end - start);
            for r in 0..chunk.retained.rows() {
                let local = chunk.trimmed_frames + r;
                let global = chunk.first_frame + r;
                if end == total || local + halo < chunk_frames {
                    assert_eq!(
                        chunk.retained.row(r),
                        batch.values.row(global),
                        "seed {seed} chunk {} frame {global}",
                        chunk.index
                    );
                    interior_total += 1;
                }
            }
            let _ = start;
        }
    }
    println!(
        "[criterion 5] PASS — {interior_total} interior frames bit-equal batch inference \
         (context 0.5s covers receptive-field halo of {halo} frames)"
    );
}

#[test]
fn criterion_6_desk_scale_end_to_end() {
    let pipeline = fixture();
    assert!(
        pipeline.run_seconds <= 900.0,
        "pipeline took {:.0}s, budget is 15 minutes",
        pipeline.run_seconds
    );
    assert!(
        pipeline.batch_f1 >= 0.90,
        "batch weighted F1 {:.4} below 0.90",
        pipeline.batch_f1
    );
    let gap = (pipeline.batch_f1 - pipeline.stream_f1).abs();
    assert!(
        gap <= 0.05,
        "streaming F1 {:.4} more than 5 points from batch {:.4}",
        pipeline.stream_f1,
        pipeline.batch_f1
    );
    println!(
        "[criterion 6] PASS — batch F1 {:.4}, streaming (c=1s, l=4s) F1 {:.4}, gap {:.4}, \
         train+eval {:.0}s",
        pipeline.batch_f1, pipeline.stream_f1, gap, pipeline.run_seconds
    );
}

#[test]
fn criterion_7_label_prep_comparison() {
    let pipeline = fixture();
    let ctx = ctcdid::PrepContext {
        vad: VadConfig::default(),
        encoder: EncoderConfig::default(),
        train: TrainConfig {
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        },
        feature: FeatureConfig::default(),
    };
    let report = ctcdid::compare_label_prep(
        &pipeline.train_set,
        &pipeline.true_counts,
        &pipeline.test_set,
        5.0,
        &ctx,
        THREADS,
    )
    .expect("compare-prep");
    let lah_f1 = report.runs[0].weighted_f1;
    let exact_f1 = report.runs[1].weighted_f1;
    // The heuristic run repeats the fixture pipeline bit for bit.
    assert_eq!(lah_f1, pipeline.batch_f1);
    let prep_gap = (lah_f1 - exact_f1).abs();
    assert!(
        prep_gap <= 0.05,
        "heuristic vs exact-count gap {prep_gap:.4} exceeds 5 points"
    );

    // Rate robustness: w = 3d within 5 points of w = 5d.
    let vocab = Vocabulary::from_dialects(&["A", "B", "C", "D"], false).unwrap();
    let (targets3, _) = prepare_targets(
        &pipeline.train_set,
        &WordCountProvider::lah(3.0),
        &vocab,
        &ctx.vad,
        false,
    )
    .expect("prepare rate 3");
    let examples3 =
        prepare_examples(&pipeline.train_set, &targets3, &ctx.feature, THREADS).expect("features");
    let report3 = train(
        &examples3,
        &vocab,
        &ctx.feature,
        &ctx.encoder,
        &ctx.train,
        THREADS,
        &mut |_| {},
    )
    .expect("train rate 3");
    let cm3 = evaluate_batch(&report3.checkpoint, &pipeline.test_set, THREADS).expect("eval");
    let f1_rate3 = weighted_f1(&cm3).expect("f1");
    let rate_gap = (lah_f1 - f1_rate3).abs();
    assert!(
        rate_gap <= 0.05,
        "rate-3 F1 {f1_rate3:.4} more than 5 points from rate-5 {lah_f1:.4}"
    );
    println!(
        "[criterion 7] PASS — heuristic {lah_f1:.4} vs exact {exact_f1:.4} (gap {prep_gap:.4}); \
         rate 3 {f1_rate3:.4} vs rate 5 {lah_f1:.4} (gap {rate_gap:.4})"
    );
}

#[test]
fn criterion_8_short_utterance_report() {
    let pipeline = fixture();
    let thresholds: Vec<f64> = (1..=8).map(|t| t as f64).collect();
    let report = duration_bin_report(&pipeline.checkpoint, &pipeline.test_set, &thresholds, THREADS)
        .expect("duration report");

    // Utterances run 2-8 s, so the 1 s bin must be empty and skipped.
    assert!(report.skipped_thresholds.contains(&1.0));
    let last = report.bins.last().expect("bins");
    assert_eq!(last.threshold_s, 8.0);
    assert_eq!(last.utterances, pipeline.test_set.len());
    assert_eq!(last.relative_degradation, 0.0);

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("duration_report.csv");
    let svg_path = dir.path().join("duration_report.svg");
    ctcdid::eval::write_duration_csv(&csv_path, &report, "acceptance").unwrap();
    ctcdid::eval::write_duration_svg(&svg_path, &report).unwrap();
    assert!(std::fs::metadata(&csv_path).unwrap().len() > 0);
    assert!(std::fs::metadata(&svg_path).unwrap().len() > 0);

    for bin in &report.bins {
        println!(
            "    <= {:.0}s: F1 {:.4} over {} utterances (degradation {:+.4})",
            bin.threshold_s, bin.weighted_f1, bin.utterances, bin.relative_degradation
        );
    }
    println!(
        "[criterion 8] PASS — bins 2..8s scored, top bin degradation exactly 0, \
         CSV/SVG artifacts written"
    );
}

#[test]
fn criterion_9_determinism() {
    let pipeline = fixture();
    let repeat = run_pipeline();
    assert_eq!(
        repeat.checkpoint.to_bytes(),
        pipeline.checkpoint.to_bytes(),
        "checkpoint bytes differ between identical runs"
    );
    assert_eq!(repeat.loss_log, pipeline.loss_log, "loss logs differ");
    assert!(
        repeat.batch_f1 == pipeline.batch_f1 && repeat.stream_f1 == pipeline.stream_f1,
        "metrics differ: batch {} vs {}, stream {} vs {}",
        repeat.batch_f1,
        pipeline.batch_f1,
        repeat.stream_f1,
        pipeline.stream_f1
    );
    println!(
        "[criterion 9] PASS — repeated run reproduces the checkpoint and every metric bit-exactly"
    );
}

// ── Supporting desk-scale checks tied to the shared fixture ──────────────

#[test]
fn training_loss_reaches_calibrated_plateau() {
    // Heuristic targets repeat the tag ~5 per speech second while the
    // acoustics supply roughly one amplitude event per burst, so the
    // alignment keeps irreducible placement entropy: the loss settles near
    // 1.5 nats/utterance rather than zero. Pilot-calibrated bound: the mean
    // over the last 100 steps stays under 2.5 nats.
    let pipeline = fixture();
    let tail: Vec<f64> = pipeline
        .loss_log
        .iter()
        .rev()
        .take(100)
        .map(|(_, l)| *l)
        .collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(mean < 2.5, "late training loss {mean:.3} above calibrated bound");
    assert!(
        pipeline.loss_log.iter().all(|(_, l)| l.is_finite()),
        "non-finite loss logged"
    );
    println!("    training loss over last 100 steps: {mean:.3} nats/utterance (bound 2.5)");
}

#[test]
fn sweep_context_trend_on_acceptance_corpus() {
    let pipeline = fixture();
    let sweep = run_sweep(
        &pipeline.checkpoint,
        &pipeline.test_set,
        &[1.0],
        &[0.0, 4.0],
        THREADS,
    )
    .expect("sweep");
    let no_context = sweep.f1(1.0, 0.0).unwrap();
    let full_context = sweep.f1(1.0, 4.0).unwrap();
    assert!(
        full_context >= no_context,
        "F1 with 4s context ({full_context:.4}) below zero-context ({no_context:.4})"
    );
    assert!(
        (pipeline.batch_f1 - full_context).abs() <= 0.05,
        "c+l >= 4s cell {full_context:.4} not within 5 points of batch {:.4}",
        pipeline.batch_f1
    );

    // A chunk covering every utterance degenerates to batch inference; the
    // sweep cell must equal the batch score exactly.
    let degenerate = run_sweep(&pipeline.checkpoint, &pipeline.test_set, &[8.0], &[0.0], THREADS)
        .expect("degenerate sweep");
    assert_eq!(degenerate.f1(8.0, 0.0).unwrap(), pipeline.batch_f1);

    println!(
        "    sweep c=1s: F1(l=0) {no_context:.4} <= F1(l=4) {full_context:.4}, \
         batch {:.4}; degenerate cell equals batch exactly",
        pipeline.batch_f1
    );
}
