//! Corpus handling: WAV ingestion, JSONL manifests, a seeded synthetic
//! multi-dialect generator, and stratified splitting.
//!
//! The synthetic generator gives every dialect a disjoint set of sinusoid
//! partials below 8 kHz and alternates speech bursts with near-silent
//! pauses, so detectors and classifiers downstream have real structure to
//! find. The generator also records the true burst schedule per utterance,
//! which doubles as ground truth for word counts and speech spans.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed corpus sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported format for {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {detail}")]
    InvalidManifest { line: usize, detail: String },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("dialect {0:?} has fewer than 2 utterances; cannot split")]
    EmptyDialect(String),
    #[error("utterance {0:?} has no dialect tag")]
    MissingDialect(String),
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("utterance must contain at least one sample")]
    EmptyUtterance,
}

/// A mono 16 kHz PCM16 utterance with optional dialect tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub dialect: Option<String>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<i16>,
        dialect: Option<String>,
    ) -> Result<Self, CorpusError> {
        if samples.is_empty() {
            return Err(CorpusError::EmptyUtterance);
        }
        Ok(Utterance {
            id: id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
            dialect,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

// ── WAV I/O ──────────────────────────────────────────────────────────────

/// Reads a mono 16 kHz PCM16 RIFF/WAVE file. Anything else is rejected.
pub fn load_wav(path: &Path) -> Result<Utterance, CorpusError> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CorpusError::FileNotFound(path.to_path_buf())
        }
        hound::Error::IoError(io) => CorpusError::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => CorpusError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;

    let spec = reader.spec();
    if spec.channels != 1
        || spec.sample_rate != SAMPLE_RATE
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(CorpusError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "need mono/{} Hz/PCM16, got {} ch/{} Hz/{} bit {:?}",
                SAMPLE_RATE, spec.channels, spec.sample_rate, spec.bits_per_sample, spec.sample_format
            ),
        });
    }

    let samples: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| CorpusError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utterance".to_string());
    Utterance::new(id, samples, None)
}

/// Writes an utterance as a canonical mono 16 kHz PCM16 WAV.
pub fn write_wav(path: &Path, utterance: &Utterance) -> Result<(), CorpusError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for &s in &utterance.samples {
        writer.write_sample(s).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    writer.finalize().map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(())
}

// ── Manifest ─────────────────────────────────────────────────────────────

/// One JSONL manifest record: `{"audio": "...", "dialect": "...", "duration": s}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub audio: String,
    pub dialect: String,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Sorted distinct dialect tags.
    pub fn dialects(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.entries.iter().map(|e| e.dialect.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| CorpusError::InvalidManifest {
                line: i + 1,
                detail: e.to_string(),
            })?;
        if entry.dialect.is_empty() {
            return Err(CorpusError::InvalidManifest {
                line: i + 1,
                detail: "empty dialect tag".into(),
            });
        }
        entries.push(entry);
    }
    Ok(Manifest { entries })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), CorpusError> {
    let mut out = String::new();
    for entry in &manifest.entries {
        out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads every manifest entry as an utterance; relative audio paths are
/// resolved against `base_dir` (normally the manifest's directory).
pub fn load_utterances(manifest: &Manifest, base_dir: &Path) -> Result<Vec<Utterance>, CorpusError> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            let raw = Path::new(&entry.audio);
            let path = if raw.is_absolute() {
                raw.to_path_buf()
            } else {
                base_dir.join(raw)
            };
            let mut utt = load_wav(&path)?;
            utt.dialect = Some(entry.dialect.clone());
            Ok(utt)
        })
        .collect()
}

// ── Synthetic corpus ─────────────────────────────────────────────────────

/// Parameters of the synthetic multi-dialect corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dialects: Vec<String>,
    pub utterances_per_dialect: usize,
    /// Utterance duration range in seconds, inclusive.
    pub duration_range_s: (f64, f64),
    /// Speech-burst duration range in seconds.
    pub burst_range_s: (f64, f64),
    /// Pause duration range in seconds.
    pub pause_range_s: (f64, f64),
    /// Peak amplitude of the background noise, relative full scale in [0, 1).
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dialects: vec!["A".into(), "B".into(), "C".into(), "D".into()],
            utterances_per_dialect: 10,
            duration_range_s: (2.0, 8.0),
            burst_range_s: (0.3, 0.6),
            pause_range_s: (0.15, 0.4),
            noise_level: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.dialects.is_empty() {
            return Err(CorpusError::InvalidSpec("no dialects".into()));
        }
        let mut sorted = self.dialects.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.dialects.len() {
            return Err(CorpusError::InvalidSpec("dialects must be distinct".into()));
        }
        if self.dialects.iter().any(|d| d.is_empty()) {
            return Err(CorpusError::InvalidSpec("empty dialect tag".into()));
        }
        let (dmin, dmax) = self.duration_range_s;
        if !(dmin >= 0.5 && dmax >= dmin) {
            return Err(CorpusError::InvalidSpec(format!(
                "duration range must satisfy 0.5 <= min <= max, got [{dmin}, {dmax}]"
            )));
        }
        for (name, (lo, hi)) in [("burst", self.burst_range_s), ("pause", self.pause_range_s)] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(CorpusError::InvalidSpec(format!(
                    "{name} range must satisfy 0 < min <= max"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(CorpusError::InvalidSpec(format!(
                "noise_level must be in [0, 1), got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// A generated utterance together with its ground-truth schedule.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utterance: Utterance,
    /// True spoken-word count; one "word" per speech burst.
    pub word_count: usize,
    /// True speech spans, seconds, sorted and disjoint.
    pub speech_spans: Vec<(f64, f64)>,
}

/// The sinusoid partials assigned to dialect `index` out of `total`.
///
/// Slots interleave across 300–7500 Hz so every dialect's set is disjoint
/// and spread over the band.
pub fn dialect_partials(index: usize, total: usize) -> [f64; 3] {
    let slot_width = 7200.0 / (3 * total) as f64;
    let mut freqs = [0.0; 3];
    for (j, f) in freqs.iter_mut().enumerate() {
        *f = 300.0 + slot_width * ((j * total + index) as f64 + 0.5);
    }
    freqs
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn utterance_seed(base: u64, dialect_idx: usize, utt_idx: usize) -> u64 {
    splitmix64(base ^ splitmix64((dialect_idx as u64) << 32 | utt_idx as u64))
}

fn synth_one(
    dialect: &str,
    partials: [f64; 3],
    spec: &SynthSpec,
    rng: &mut StdRng,
    id: String,
) -> SynthUtterance {
    let sr = SAMPLE_RATE as f64;
    let duration_s = rng.gen_range(spec.duration_range_s.0..=spec.duration_range_s.1);
    let total = (duration_s * sr).round() as usize;
    let mut signal = vec![0.0f64; total];

    // Background noise everywhere, bounded by noise_level.
    for v in signal.iter_mut() {
        *v = spec.noise_level * rng.gen_range(-1.0..1.0);
    }

    let ramp = (0.005 * sr) as usize; // 5 ms onset/offset
    let amps = [0.5, 0.3, 0.2];
    let mut spans = Vec::new();
    let mut cursor = 0usize;
    loop {
        let burst_len =
            (rng.gen_range(spec.burst_range_s.0..=spec.burst_range_s.1) * sr).round() as usize;
        if cursor + burst_len > total {
            break;
        }
        let level = rng.gen_range(0.18..0.38);
        let phases: [f64; 3] = [
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ];
        // Syllable-like amplitude modulation near the assumed word rate,
        // shallow enough that modulation valleys stay well above the floor.
        let am_hz = rng.gen_range(3.5..6.5);
        let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for n in 0..burst_len {
            let t = n as f64 / sr;
            let mut s = 0.0;
            for ((&f, &a), &ph) in partials.iter().zip(&amps).zip(&phases) {
                s += a * (std::f64::consts::TAU * f * t + ph).sin();
            }
            let am = 0.75 + 0.25 * (std::f64::consts::TAU * am_hz * t + am_phase).sin();
            let env = if n < ramp {
                n as f64 / ramp as f64
            } else if n + ramp > burst_len {
                (burst_len - n) as f64 / ramp as f64
            } else {
                1.0
            };
            signal[cursor + n] += level * am * env * s;
        }
        spans.push((cursor as f64 / sr, (cursor + burst_len) as f64 / sr));
        cursor += burst_len;

        let pause_len =
            (rng.gen_range(spec.pause_range_s.0..=spec.pause_range_s.1) * sr).round() as usize;
        cursor += pause_len;
        if cursor >= total {
            break;
        }
    }

    let samples: Vec<i16> = signal
        .iter()
        .map(|&v| (v.clamp(-1.0, 1.0) * 32767.0).round() as i16)
        .collect();

    SynthUtterance {
        word_count: spans.len(),
        speech_spans: spans,
        utterance: Utterance {
            id,
            samples,
            sample_rate: SAMPLE_RATE,
            dialect: Some(dialect.to_string()),
        },
    }
}

/// Generates the corpus with per-utterance ground truth. Deterministic in
/// `spec.seed`; each utterance draws from its own derived RNG stream, so
/// output does not depend on generation order.
pub fn synthesize_corpus_detailed(spec: &SynthSpec) -> Result<Vec<SynthUtterance>, CorpusError> {
    spec.validate()?;
    let n = spec.dialects.len();
    let mut out = Vec::with_capacity(n * spec.utterances_per_dialect);
    for (d_idx, dialect) in spec.dialects.iter().enumerate() {
        let partials = dialect_partials(d_idx, n);
        for u_idx in 0..spec.utterances_per_dialect {
            let mut rng = StdRng::seed_from_u64(utterance_seed(spec.seed, d_idx, u_idx));
            let id = format!("{dialect}_{u_idx:04}");
            out.push(synth_one(dialect, partials, spec, &mut rng, id));
        }
    }
    Ok(out)
}

/// Generates the corpus, dropping the ground-truth schedule.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Vec<Utterance>, CorpusError> {
    Ok(synthesize_corpus_detailed(spec)?
        .into_iter()
        .map(|s| s.utterance)
        .collect())
}

// ── Splitting ────────────────────────────────────────────────────────────

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-dialect stratified split into (train, test). Within each dialect the
/// order is shuffled by a seed derived from the dialect tag, so the split
/// does not depend on interleaving of the input.
pub fn split_corpus(
    utterances: Vec<Utterance>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Utterance>, Vec<Utterance>), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }

    let mut groups: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for utt in utterances {
        let dialect = utt
            .dialect
            .clone()
            .ok_or_else(|| CorpusError::MissingDialect(utt.id.clone()))?;
        groups.entry(dialect).or_default().push(utt);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (dialect, mut group) in groups {
        if group.len() < 2 {
            return Err(CorpusError::EmptyDialect(dialect));
        }
        let mut rng = StdRng::seed_from_u64(splitmix64(seed ^ fnv1a(&dialect)));
        // Fisher-Yates
        for i in (1..group.len()).rev() {
            let j = rng.gen_range(0..=i);
            group.swap(i, j);
        }
        let n = group.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let rest = group.split_off(n_train);
        train.extend(group);
        test.extend(rest);
    }
    Ok((train, test))
}
