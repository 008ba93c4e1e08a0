//! Shared test oracles, independent of the library's implementation paths.

use ctcdid::Mat;

/// Softmax computed directly in probability space (test-only; small T).
pub fn softmax_rows(logits: &Mat) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Collapse reimplemented for the oracle: merge adjacent repeats, drop blank.
fn oracle_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &tok) in path.iter().enumerate() {
        if tok != blank && (i == 0 || path[i - 1] != tok) {
            out.push(tok);
        }
    }
    out
}

/// Brute-force CTC likelihood: enumerate every |V|^T frame labelling, keep
/// the ones that collapse to the target, and sum their probabilities.
pub fn brute_force_ctc_probability(logits: &Mat, target: &[usize], blank: usize) -> f64 {
    let frames = logits.rows();
    let vocab = logits.cols();
    let probs = softmax_rows(logits);
    let mut total = 0.0f64;
    let n_paths = vocab.pow(frames as u32);
    let mut path = vec![0usize; frames];
    for code in 0..n_paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % vocab;
            c /= vocab;
        }
        if oracle_collapse(&path, blank) == target {
            let mut p = 1.0;
            for (t, &tok) in path.iter().enumerate() {
                p *= probs[t][tok];
            }
            total += p;
        }
    }
    total
}

/// Deterministic pseudo-random logits for a seed (splitmix64 stream mapped
/// to roughly [-2, 2)).
pub fn seeded_logits(frames: usize, vocab: usize, seed: u64) -> Mat {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    };
    Mat::from_fn(frames, vocab, |_, _| next())
}
