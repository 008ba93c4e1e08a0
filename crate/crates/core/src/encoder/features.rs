//! Log mel-filterbank features: Hann window, radix-2 FFT, triangular
//! mel-spaced filters over 0–8 kHz, natural log with a floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Utterance, SAMPLE_RATE};
use crate::mat::Mat;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("utterance has {samples} samples but the analysis window needs {window}")]
    TooShort { samples: usize, window: usize },
}

/// Frame analysis parameters. The 320-sample hop at 16 kHz gives exactly
/// 50 frames per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hop_samples: usize,
    pub window_samples: usize,
    pub n_bands: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hop_samples: 320,
            window_samples: 400,
            n_bands: 24,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn assert_valid(&self) {
        assert!(self.hop_samples > 0 && self.window_samples >= self.hop_samples);
        assert!(
            (SAMPLE_RATE as usize).is_multiple_of(self.hop_samples),
            "hop must divide the sample rate for an integral frame rate"
        );
        assert!(self.n_bands >= 1);
        assert!(self.log_floor > 0.0);
    }

    /// Output frames for a sample count: `floor((n - window)/hop) + 1`.
    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.window_samples {
            0
        } else {
            (samples - self.window_samples) / self.hop_samples + 1
        }
    }

    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.hop_samples as f64
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable analysis state: Hann window, twiddle table, filter weights.
pub struct FeatureExtractor {
    config: FeatureConfig,
    nfft: usize,
    hann: Vec<f64>,
    /// w_n^k = exp(-2*pi*i*k/n) for k in 0..n/2.
    twiddle_re: Vec<f64>,
    twiddle_im: Vec<f64>,
    /// Per band: first FFT bin and triangle weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl FeatureExtractor {
    pub fn new(config: &FeatureConfig) -> Self {
        config.assert_valid();
        let nfft = config.window_samples.next_power_of_two();
        let hann: Vec<f64> = (0..config.window_samples)
            .map(|n| {
                0.5 - 0.5
                    * (std::f64::consts::TAU * n as f64 / config.window_samples as f64).cos()
            })
            .collect();
        let (twiddle_re, twiddle_im): (Vec<f64>, Vec<f64>) = (0..nfft / 2)
            .map(|k| {
                let angle = -std::f64::consts::TAU * k as f64 / nfft as f64;
                (angle.cos(), angle.sin())
            })
            .unzip();
        let filters = mel_filters(config.n_bands, nfft);
        FeatureExtractor {
            config: config.clone(),
            nfft,
            hann,
            twiddle_re,
            twiddle_im,
            filters,
        }
    }

    /// Log filterbank energies, one row per frame.
    pub fn extract(&self, samples: &[i16]) -> Result<Mat, FeatureError> {
        let cfg = &self.config;
        if samples.len() < cfg.window_samples {
            return Err(FeatureError::TooShort {
                samples: samples.len(),
                window: cfg.window_samples,
            });
        }
        let frames = cfg.frames_for(samples.len());
        let mut out = Mat::zeros(frames, cfg.n_bands);
        let mut re = vec![0.0f64; self.nfft];
        let mut im = vec![0.0f64; self.nfft];
        let mut power = vec![0.0f64; self.nfft / 2 + 1];

        for f in 0..frames {
            let start = f * cfg.hop_samples;
            for (n, v) in re.iter_mut().enumerate() {
                *v = if n < cfg.window_samples {
                    samples[start + n] as f64 / 32768.0 * self.hann[n]
                } else {
                    0.0
                };
            }
            im.iter_mut().for_each(|v| *v = 0.0);
            self.fft_in_place(&mut re, &mut im);
            for (k, p) in power.iter_mut().enumerate() {
                *p = re[k] * re[k] + im[k] * im[k];
            }

            let row = out.row_mut(f);
            for (b, (first_bin, weights)) in self.filters.iter().enumerate() {
                let mut energy = 0.0;
                for (w, p) in weights.iter().zip(&power[*first_bin..]) {
                    energy += w * p;
                }
                row[b] = energy.max(cfg.log_floor).ln();
            }
        }
        Ok(out)
    }

    fn fft_in_place(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.nfft;
        // Bit-reversal permutation.
        let mut j = 0usize;
        for i in 0..n {
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            let half = len / 2;
            let mut base = 0;
            while base < n {
                for k in 0..half {
                    let wr = self.twiddle_re[k * stride];
                    let wi = self.twiddle_im[k * stride];
                    let i0 = base + k;
                    let i1 = i0 + half;
                    let tr = re[i1] * wr - im[i1] * wi;
                    let ti = re[i1] * wi + im[i1] * wr;
                    re[i1] = re[i0] - tr;
                    im[i1] = im[i0] - ti;
                    re[i0] += tr;
                    im[i0] += ti;
                }
                base += len;
            }
            len <<= 1;
        }
    }
}

/// Triangular filters with peaks equally spaced on the mel scale across
/// 0–8000 Hz.
fn mel_filters(n_bands: usize, nfft: usize) -> Vec<(usize, Vec<f64>)> {
    let f_max = SAMPLE_RATE as f64 / 2.0;
    let mel_max = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / nfft as f64;
    let n_bins = nfft / 2 + 1;

    let mut filters = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let first_bin = (lo / bin_hz).ceil() as usize;
        let last_bin = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
        let mut weights = Vec::new();
        for bin in first_bin..=last_bin {
            let f = bin as f64 * bin_hz;
            let w = if f < center {
                if center > lo { (f - lo) / (center - lo) } else { 0.0 }
            } else if hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            weights.push(w.max(0.0));
        }
        filters.push((first_bin, weights));
    }
    filters
}

/// One-shot extraction from an utterance.
pub fn extract_features(utterance: &Utterance, config: &FeatureConfig) -> Result<Mat, FeatureError> {
    FeatureExtractor::new(config).extract(&utterance.samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts_match_hop_arithmetic() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.frames_for(16_000), 49);
        assert_eq!(cfg.frames_for(64_000), 199);
        assert_eq!(cfg.frames_for(399), 0);
        assert_eq!(cfg.frames_for(400), 1);
        assert_eq!(cfg.frame_rate(), 50.0);
    }

    #[test]
    fn zero_audio_gives_constant_floor_rows() {
        let cfg = FeatureConfig::default();
        let utt = Utterance::new("z", vec![0i16; 16_000], None).unwrap();
        let feats = extract_features(&utt, &cfg).unwrap();
        assert_eq!(feats.rows(), 49);
        let expect = cfg.log_floor.ln();
        for v in feats.data() {
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn too_short_is_an_error() {
        let cfg = FeatureConfig::default();
        let utt = Utterance::new("s", vec![0i16; 300], None).unwrap();
        assert!(matches!(
            extract_features(&utt, &cfg),
            Err(FeatureError::TooShort { .. })
        ));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(&cfg);
        let n = ex.nfft;
        let mut re: Vec<f64> = (0..n)
            .map(|i| ((i * 37 + 11) % 101) as f64 / 101.0 - 0.5)
            .collect();
        let mut im = vec![0.0; n];
        let input = re.clone();
        ex.fft_in_place(&mut re, &mut im);
        for k in (0..n).step_by(97) {
            let mut sr = 0.0;
            let mut si = 0.0;
            for (t, &x) in input.iter().enumerate() {
                let ang = -std::f64::consts::TAU * (k * t % n) as f64 / n as f64;
                sr += x * ang.cos();
                si += x * ang.sin();
            }
            assert!((re[k] - sr).abs() < 1e-9, "bin {k}: {} vs {sr}", re[k]);
            assert!((im[k] - si).abs() < 1e-9, "bin {k}: {} vs {si}", im[k]);
        }
    }

    #[test]
    fn tone_lands_in_the_expected_band() {
        // A 1 kHz tone should concentrate energy into one or two bands and
        // leave far bands at the floor.
        let cfg = FeatureConfig::default();
        let samples: Vec<i16> = (0..16_000)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                (0.5 * (std::f64::consts::TAU * 1000.0 * t).sin() * 32767.0) as i16
            })
            .collect();
        let utt = Utterance::new("t", samples, None).unwrap();
        let feats = extract_features(&utt, &cfg).unwrap();
        let mid = feats.row(feats.rows() / 2);
        let hot = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // 1 kHz sits at mel ~1000; band edges place it around band 7 of 24.
        assert!((5..=9).contains(&hot), "hottest band {hot}");
        assert!(mid[hot] > mid[20] + 5.0);
    }
}
