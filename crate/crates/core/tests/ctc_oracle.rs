//! The CTC dynamic program against two independent oracles: exhaustive
//! alignment enumeration for the loss and central finite differences for
//! the gradient.

mod common;

use common::{brute_force_ctc_probability, seeded_logits};
use ctcdid::{ctc_loss_grad, FrameLogits, Mat, TargetSequence, Vocabulary};

fn target_for(seed: u64, len: usize, vocab: usize) -> Vec<usize> {
    // Cycle through non-blank tokens with a seed-dependent offset/stride.
    (0..len)
        .map(|i| 1 + ((seed as usize + i * (1 + seed as usize % 3)) % (vocab - 1)))
        .collect()
}

#[test]
fn loss_matches_exhaustive_enumeration() {
    let blank = Vocabulary::BLANK_INDEX;
    let mut checked = 0;
    for frames in 1..=5 {
        for vocab in 2..=4 {
            for target_len in 1..=3.min(frames) {
                for seed in 0..6u64 {
                    let ids = target_for(seed, target_len, vocab);
                    let target = TargetSequence::new(ids.clone()).unwrap();
                    let logits = seeded_logits(frames, vocab, seed * 1000 + checked);
                    let expected = brute_force_ctc_probability(&logits, &ids, blank);
                    let result = ctc_loss_grad(&FrameLogits::new(logits), &target, blank);
                    match result {
                        Ok(res) => {
                            assert!(expected > 0.0, "oracle says infeasible, impl disagrees");
                            let got = (-res.loss).exp();
                            let rel = (got - expected).abs() / expected;
                            assert!(
                                rel <= 1e-9,
                                "T={frames} V={vocab} L={target_len} seed={seed}: {got} vs {expected} (rel {rel:e})"
                            );
                        }
                        Err(_) => {
                            assert_eq!(
                                expected, 0.0,
                                "impl says infeasible but paths exist (T={frames} L={target_len})"
                            );
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn two_frame_uniform_example_equals_ln_three() {
    // Brute force first: alignments {A., .A, AA} each 1/9, so p = 1/3.
    let logits = Mat::zeros(2, 3);
    let p = brute_force_ctc_probability(&logits, &[1], 0);
    assert!((p - 1.0 / 3.0).abs() < 1e-15);

    let target = TargetSequence::new(vec![1]).unwrap();
    let res = ctc_loss_grad(&FrameLogits::new(logits), &target, 0).unwrap();
    assert!((res.loss - 3.0f64.ln()).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_finite_differences() {
    let blank = Vocabulary::BLANK_INDEX;
    let eps = 1e-4;
    for case in 0..20u64 {
        let frames = 3 + (case % 3) as usize;
        let vocab = 3 + (case % 2) as usize;
        let target_len = 1 + (case as usize % 2.min(frames));
        let ids = target_for(case, target_len, vocab);
        let target = TargetSequence::new(ids).unwrap();
        let base = seeded_logits(frames, vocab, 77 + case);

        let analytic = ctc_loss_grad(&FrameLogits::new(base.clone()), &target, blank)
            .unwrap()
            .grad;
        for t in 0..frames {
            for k in 0..vocab {
                let mut plus = base.clone();
                plus.set(t, k, plus.get(t, k) + eps);
                let mut minus = base.clone();
                minus.set(t, k, minus.get(t, k) - eps);
                let loss_plus = ctc_loss_grad(&FrameLogits::new(plus), &target, blank)
                    .unwrap()
                    .loss;
                let loss_minus = ctc_loss_grad(&FrameLogits::new(minus), &target, blank)
                    .unwrap()
                    .loss;
                let numeric = (loss_plus - loss_minus) / (2.0 * eps);
                let diff = (analytic.get(t, k) - numeric).abs();
                assert!(
                    diff <= 1e-5,
                    "case {case} grad[{t}][{k}]: analytic {} vs numeric {numeric} (|d| {diff:e})",
                    analytic.get(t, k)
                );
            }
        }
    }
}

#[test]
fn gradient_rows_sum_to_zero_on_random_instances() {
    let blank = Vocabulary::BLANK_INDEX;
    for case in 0..30u64 {
        let frames = 2 + (case % 5) as usize;
        let vocab = 2 + (case % 3) as usize;
        let ids = target_for(case, 1 + (case as usize % frames).min(2), vocab);
        let target = match TargetSequence::new(ids) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let logits = seeded_logits(frames, vocab, 31 * case + 5);
        if let Ok(res) = ctc_loss_grad(&FrameLogits::new(logits), &target, blank) {
            for t in 0..frames {
                let sum: f64 = res.grad.row(t).iter().sum();
                assert!(sum.abs() <= 1e-8, "case {case} row {t}: {sum}");
            }
        }
    }
}

#[test]
fn loss_is_nonnegative_and_probability_bounded() {
    let blank = Vocabulary::BLANK_INDEX;
    for seed in 0..50u64 {
        let logits = seeded_logits(6, 4, seed);
        let target = TargetSequence::new(target_for(seed, 3, 4)).unwrap();
        if let Ok(res) = ctc_loss_grad(&FrameLogits::new(logits), &target, blank) {
            assert!(res.loss >= 0.0, "seed {seed}: loss {}", res.loss);
        }
    }
}
