//! Command-line pipeline: synthesize a corpus, prepare repeated-tag targets,
//! train the frame encoder, evaluate batch or streaming, sweep streaming
//! configurations, and compare target-preparation modes.

mod config;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::FileConfig;
use ctcdid::{
    evaluate_batch, load_utterances, load_wav, prepare_examples, prepare_targets, read_manifest,
    read_targets, stream_chunks, synthesize_corpus_detailed, weighted_f1, Checkpoint,
    EncoderConfig, FeatureConfig, Manifest, ManifestEntry, StreamConfig, StreamState, SynthSpec,
    TrainConfig, TrainEvent, Utterance, VadConfig, Vocabulary, WordCountProvider,
};

#[derive(Parser)]
#[command(name = "ctcdid", version, about = "CTC dialect identification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-dialect corpus (WAVs + manifest).
    Synth(SynthArgs),
    /// Build repeated-tag CTC targets from a manifest.
    Prepare(PrepareArgs),
    /// Train the frame encoder on prepared targets.
    Train(TrainArgs),
    /// Evaluate a checkpoint with full-utterance inference.
    Eval(EvalArgs),
    /// Stream one WAV in chunks, printing running predictions as JSON.
    Stream(StreamArgs),
    /// Sweep streaming chunk sizes and context windows.
    Sweep(SweepArgs),
    /// Train twice (heuristic vs exact word counts) and compare F1.
    ComparePrep(ComparePrepArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Prepare(args) => run_prepare(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Stream(args) => run_stream(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::ComparePrep(args) => run_compare_prep(args),
    };
    if let Err(err) = result {
        let payload = serde_json::json!({
            "error": err.to_string(),
            "detail": format!("{err:#}"),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}

fn write_run_config(dir: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("run_config.json");
    std::fs::write(&path, format!("{value:#}\n"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_corpus(manifest_path: &Path) -> Result<Vec<Utterance>> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(load_utterances(&manifest, base)?)
}

fn vocab_from_utterances(utterances: &[Utterance], with_space: bool) -> Result<Vocabulary> {
    let mut dialects: Vec<String> = utterances
        .iter()
        .filter_map(|u| u.dialect.clone())
        .collect();
    dialects.sort();
    dialects.dedup();
    if dialects.is_empty() {
        bail!("manifest has no dialect tags");
    }
    Ok(Vocabulary::from_dialects(&dialects, with_space)?)
}

fn parse_float_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("bad number {s:?}: {e}"))
        })
        .collect()
}

fn read_word_counts(path: &Path) -> Result<BTreeMap<String, usize>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening word counts {}", path.display()))?;
    let mut counts = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("word counts line {}", i + 1))?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| anyhow!("word counts line {}: missing \"id\"", i + 1))?;
        let words = value
            .get("words")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| anyhow!("word counts line {}: missing \"words\"", i + 1))?;
        counts.insert(id.to_string(), words as usize);
    }
    Ok(counts)
}

// ── synth ────────────────────────────────────────────────────────────────

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated dialect tags.
    #[arg(long)]
    dialects: Option<String>,
    #[arg(long)]
    per_dialect: Option<usize>,
    #[arg(long)]
    duration_min: Option<f64>,
    #[arg(long)]
    duration_max: Option<f64>,
    #[arg(long)]
    burst_min: Option<f64>,
    #[arg(long)]
    burst_max: Option<f64>,
    #[arg(long)]
    pause_min: Option<f64>,
    #[arg(long)]
    pause_max: Option<f64>,
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (WAVs under `wav/`, manifest and word counts at top).
    #[arg(long)]
    out: PathBuf,
    /// Optional key = value config file; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let dialects_raw = file.resolve(args.dialects, "dialects", "A,B,C,D".to_string())?;
    let dialects: Vec<String> = dialects_raw
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let spec = SynthSpec {
        dialects,
        utterances_per_dialect: file.resolve(args.per_dialect, "per-dialect", 10)?,
        duration_range_s: (
            file.resolve(args.duration_min, "duration-min", 2.0)?,
            file.resolve(args.duration_max, "duration-max", 8.0)?,
        ),
        burst_range_s: (
            file.resolve(args.burst_min, "burst-min", 0.3)?,
            file.resolve(args.burst_max, "burst-max", 0.6)?,
        ),
        pause_range_s: (
            file.resolve(args.pause_min, "pause-min", 0.15)?,
            file.resolve(args.pause_max, "pause-max", 0.4)?,
        ),
        noise_level: file.resolve(args.noise_level, "noise-level", 0.01)?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };

    let run_config = serde_json::json!({
        "subcommand": "synth",
        "spec": serde_json::to_value(&spec)?,
        "out": args.out.display().to_string(),
    });
    let wav_dir = args.out.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    write_run_config(&args.out, &run_config)?;

    let corpus = synthesize_corpus_detailed(&spec)?;
    let mut manifest = Manifest::default();
    let mut counts = String::new();
    for synth in &corpus {
        let name = format!("wav/{}.wav", synth.utterance.id);
        ctcdid::write_wav(&args.out.join(&name), &synth.utterance)?;
        manifest.entries.push(ManifestEntry {
            audio: name,
            dialect: synth.utterance.dialect.clone().unwrap(),
            duration: synth.utterance.duration_s(),
        });
        counts.push_str(
            &serde_json::json!({"id": synth.utterance.id, "words": synth.word_count}).to_string(),
        );
        counts.push('\n');
    }
    ctcdid::write_manifest(&args.out.join("manifest.jsonl"), &manifest)?;
    std::fs::write(args.out.join("word_counts.jsonl"), counts)?;
    println!(
        "wrote {} utterances to {}",
        manifest.entries.len(),
        args.out.display()
    );
    Ok(())
}

// ── prepare ──────────────────────────────────────────────────────────────

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Target-length source: `lah` (speech-rate heuristic) or `exact`.
    #[arg(long)]
    mode: Option<String>,
    /// Words per second for the heuristic.
    #[arg(long)]
    rate: Option<f64>,
    /// Word-counts JSONL (required for `--mode exact`).
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Insert the space token between repeated tags.
    #[arg(long)]
    spaces: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_prepare(args: PrepareArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mode = file.resolve(args.mode, "mode", "lah".to_string())?;
    let rate = file.resolve(args.rate, "rate", ctcdid::DEFAULT_RATE_WPS)?;
    let spaces = file.resolve_flag(args.spaces, "spaces")?;
    let counts_path = file.resolve_opt(args.counts.map(|p| p.display().to_string()), "counts")?;

    let provider = match mode.as_str() {
        "lah" => {
            if rate < 3.0 {
                eprintln!("notice: rate {rate} is below the robust range (>= 3 words/s)");
            }
            WordCountProvider::lah(rate)
        }
        "exact" => {
            let path = counts_path
                .as_deref()
                .ok_or_else(|| anyhow!("--counts is required with --mode exact"))?;
            WordCountProvider::Exact(read_word_counts(Path::new(path))?)
        }
        other => bail!("unknown mode {other:?}; use lah or exact"),
    };

    let utterances = load_corpus(&args.manifest)?;
    let vocab = vocab_from_utterances(&utterances, spaces)?;
    let vad = VadConfig::default();
    let (targets, skipped) = prepare_targets(&utterances, &provider, &vocab, &vad, spaces)?;
    ctcdid::write_targets(&args.out, &targets)?;

    let run_config = serde_json::json!({
        "subcommand": "prepare",
        "manifest": args.manifest.display().to_string(),
        "mode": mode,
        "rate": rate,
        "spaces": spaces,
        "counts": counts_path,
        "vocabulary": vocab.tokens(),
        "out": args.out.display().to_string(),
    });
    let sidecar = args.out.with_extension("run.json");
    std::fs::write(&sidecar, format!("{run_config:#}\n"))?;

    for skip in &skipped {
        eprintln!("notice: skipped {} ({})", skip.id, skip.reason);
    }
    println!(
        "prepared {} targets ({} skipped) -> {}",
        targets.len(),
        skipped.len(),
        args.out.display()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

#[derive(Args, Clone)]
struct TrainHyperArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    conv_width: Option<usize>,
    #[arg(long)]
    conv_stages: Option<usize>,
    #[arg(long)]
    n_bands: Option<usize>,
    /// Worker threads; 0 = auto.
    #[arg(long)]
    threads: Option<usize>,
}

struct ResolvedTrain {
    train: TrainConfig,
    encoder: EncoderConfig,
    feature: FeatureConfig,
    threads: usize,
}

fn resolve_train(args: &TrainHyperArgs, file: &FileConfig) -> Result<ResolvedTrain> {
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        learning_rate: file.resolve(args.lr, "lr", defaults.learning_rate)?,
        batch_size: file.resolve(args.batch_size, "batch-size", defaults.batch_size)?,
        max_steps: file.resolve(args.max_steps, "max-steps", defaults.max_steps)?,
        grad_clip_norm: file.resolve(args.grad_clip, "grad-clip", defaults.grad_clip_norm)?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
        checkpoint_every: file.resolve(args.checkpoint_every, "checkpoint-every", 0)?,
    };
    let enc_defaults = EncoderConfig::default();
    let encoder = EncoderConfig {
        hidden: file.resolve(args.hidden, "hidden", enc_defaults.hidden)?,
        conv_width: file.resolve(args.conv_width, "conv-width", enc_defaults.conv_width)?,
        conv_stages: file.resolve(args.conv_stages, "conv-stages", enc_defaults.conv_stages)?,
    };
    let feature = FeatureConfig {
        n_bands: file.resolve(args.n_bands, "n-bands", FeatureConfig::default().n_bands)?,
        ..FeatureConfig::default()
    };
    let threads = file.resolve(args.threads, "threads", 0)?;
    Ok(ResolvedTrain {
        train,
        encoder,
        feature,
        threads,
    })
}

fn train_run_config(name: &str, resolved: &ResolvedTrain) -> serde_json::Value {
    serde_json::json!({
        "subcommand": name,
        "train": {
            "lr": resolved.train.learning_rate,
            "batch_size": resolved.train.batch_size,
            "max_steps": resolved.train.max_steps,
            "grad_clip": resolved.train.grad_clip_norm,
            "seed": resolved.train.seed,
            "checkpoint_every": resolved.train.checkpoint_every,
        },
        "encoder": {
            "hidden": resolved.encoder.hidden,
            "conv_width": resolved.encoder.conv_width,
            "conv_stages": resolved.encoder.conv_stages,
        },
        "feature": serde_json::to_value(&resolved.feature).unwrap(),
        "threads": resolved.threads,
    })
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// Targets were prepared with the space token.
    #[arg(long)]
    spaces: bool,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_train(args: TrainArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let spaces = file.resolve_flag(args.spaces, "spaces")?;
    let resolved = resolve_train(&args.hyper, &file)?;

    let utterances = load_corpus(&args.manifest)?;
    let vocab = vocab_from_utterances(&utterances, spaces)?;
    let targets = read_targets(&args.targets)?;
    validate_targets(&targets, &utterances, &vocab)?;
    let examples = prepare_examples(&utterances, &targets, &resolved.feature, resolved.threads)?;

    std::fs::create_dir_all(&args.out)?;
    let mut run_config = train_run_config("train", &resolved);
    run_config["manifest"] = args.manifest.display().to_string().into();
    run_config["targets"] = args.targets.display().to_string().into();
    run_config["spaces"] = spaces.into();
    run_config["vocabulary"] = serde_json::to_value(vocab.tokens())?;
    write_run_config(&args.out, &run_config)?;

    let mut loss_csv = String::from("step,loss\n");
    let out_dir = args.out.clone();
    let report = ctcdid::train(
        &examples,
        &vocab,
        &resolved.feature,
        &resolved.encoder,
        &resolved.train,
        resolved.threads,
        &mut |event| match event {
            TrainEvent::Step { step, loss } => {
                loss_csv.push_str(&format!("{step},{loss:.6}\n"));
                if step % 100 == 0 {
                    eprintln!("step {step}: loss {loss:.4}");
                }
            }
            TrainEvent::Snapshot { step, checkpoint } => {
                let path = out_dir.join(format!("checkpoint_{step:06}.ckpt"));
                if let Err(e) = checkpoint.save(&path) {
                    eprintln!("notice: failed to write snapshot {}: {e}", path.display());
                }
            }
        },
    )?;

    if report.dropped_infeasible > 0 {
        eprintln!(
            "notice: dropped {} target(s) infeasible for their frame counts",
            report.dropped_infeasible
        );
    }
    report.checkpoint.save(&args.out.join("checkpoint.ckpt"))?;
    std::fs::write(args.out.join("loss_log.csv"), loss_csv)?;
    let final_loss = report.loss_log.last().map(|(_, l)| *l).unwrap_or(f64::NAN);
    println!(
        "trained {} steps, final loss {final_loss:.4}, checkpoint at {}",
        report.loss_log.len(),
        args.out.join("checkpoint.ckpt").display()
    );
    Ok(())
}

/// Every target must reference its utterance's own dialect index; catches
/// vocabulary mismatches (e.g. a missing --spaces flag).
fn validate_targets(
    targets: &[ctcdid::PreparedTarget],
    utterances: &[Utterance],
    vocab: &Vocabulary,
) -> Result<()> {
    let by_id: BTreeMap<&str, &Utterance> =
        utterances.iter().map(|u| (u.id.as_str(), u)).collect();
    for target in targets {
        let utt = by_id
            .get(target.id.as_str())
            .ok_or_else(|| anyhow!("target {:?} has no manifest entry", target.id))?;
        let dialect = utt
            .dialect
            .as_deref()
            .ok_or_else(|| anyhow!("utterance {:?} has no dialect", target.id))?;
        let expect = vocab
            .dialect_index(dialect)
            .ok_or_else(|| anyhow!("dialect {dialect:?} not in vocabulary"))?;
        let ok = target
            .target
            .iter()
            .all(|&t| t == expect || Some(t) == vocab.space_index());
        if !ok {
            bail!(
                "target for {:?} does not match dialect {dialect:?} under this vocabulary; \
                 were the targets prepared with a different dialect set or --spaces setting?",
                target.id
            );
        }
    }
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────────

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ascending duration thresholds (seconds) for the robustness report.
    #[arg(long)]
    duration_bins: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let threads = file.resolve(args.threads, "threads", 0)?;
    let bins_raw = file.resolve_opt(args.duration_bins, "duration-bins")?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let test = load_corpus(&args.manifest)?;

    let run_config = serde_json::json!({
        "subcommand": "eval",
        "manifest": args.manifest.display().to_string(),
        "checkpoint": args.checkpoint.display().to_string(),
        "duration_bins": bins_raw,
        "threads": threads,
    });
    std::fs::create_dir_all(&args.out)?;
    write_run_config(&args.out, &run_config)?;
    let note = run_config.to_string();

    let cm = evaluate_batch(&ckpt, &test, threads)?;
    let f1 = weighted_f1(&cm)?;
    ctcdid::eval::write_confusion_csv(&args.out.join("confusion.csv"), &cm, &note)?;
    let summary = serde_json::json!({
        "weighted_f1": f1,
        "utterances": cm.total(),
        "unknown_predictions": cm.unknown_count(),
    });
    std::fs::write(args.out.join("eval.json"), format!("{summary:#}\n"))?;
    println!(
        "weighted F1 {f1:.4} over {} utterances ({} unknown)",
        cm.total(),
        cm.unknown_count()
    );

    if let Some(raw) = bins_raw {
        let thresholds = parse_float_list(&raw)?;
        let report = ctcdid::duration_bin_report(&ckpt, &test, &thresholds, threads)?;
        for skipped in &report.skipped_thresholds {
            eprintln!("notice: no utterances at or below {skipped}s; bin skipped");
        }
        for bin in &report.bins {
            println!(
                "<= {:>5.1}s: F1 {:.4} over {:>4} utterances (degradation {:+.4})",
                bin.threshold_s, bin.weighted_f1, bin.utterances, bin.relative_degradation
            );
        }
        ctcdid::eval::write_duration_csv(&args.out.join("duration_report.csv"), &report, &note)?;
        ctcdid::eval::write_duration_svg(&args.out.join("duration_report.svg"), &report)?;
    }
    Ok(())
}

// ── stream ───────────────────────────────────────────────────────────────

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Chunk duration in seconds.
    #[arg(long)]
    chunk: Option<f64>,
    /// Left context in seconds.
    #[arg(long)]
    context: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_stream(args: StreamArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let chunk = file.resolve(args.chunk, "chunk", 1.0)?;
    let context = file.resolve(args.context, "context", 4.0)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let utterance = load_wav(&args.wav)?;
    let cfg = StreamConfig::new(chunk, context)?;

    let chunks = stream_chunks(&utterance, &ckpt.params, &ckpt.feature, &cfg)?;
    let mut state = StreamState::new(ckpt.vocab.size());
    let sr = ctcdid::SAMPLE_RATE as f64;
    for chunk_out in &chunks {
        state.push_chunk(chunk_out);
        if chunk_out.retained.rows() == 0 {
            eprintln!(
                "notice: chunk {} window shorter than the analysis window; no frames",
                chunk_out.index
            );
        }
        let running = state.running_prediction(&ckpt.vocab);
        let line = serde_json::json!({
            "chunk": chunk_out.index,
            "window_start_s": chunk_out.window.0 as f64 / sr,
            "window_end_s": chunk_out.window.1 as f64 / sr,
            "new_audio_start_s": chunk_out.stride_start as f64 / sr,
            "retained_frames": chunk_out.retained.rows(),
            "running_label": running.label(),
        });
        println!("{line}");
    }

    let final_pred = state.running_prediction(&ckpt.vocab);
    let line = serde_json::json!({
        "final": true,
        "label": final_pred.label(),
        "histogram": final_pred.token_histogram,
        "decoded_tokens": final_pred.decoded_length,
        "config": {"chunk_s": chunk, "context_s": context,
                    "wav": args.wav.display().to_string(),
                    "checkpoint": args.checkpoint.display().to_string()},
    });
    println!("{line}");
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────────

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated chunk sizes in seconds.
    #[arg(long)]
    chunks: Option<String>,
    /// Comma-separated context windows in seconds.
    #[arg(long)]
    contexts: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let threads = file.resolve(args.threads, "threads", 0)?;
    let chunks = parse_float_list(&file.resolve(args.chunks, "chunks", "0.5,1.0,2.0,4.0".into())?)?;
    let contexts =
        parse_float_list(&file.resolve(args.contexts, "contexts", "0.5,1.0,2.0,4.0".into())?)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let test = load_corpus(&args.manifest)?;

    let run_config = serde_json::json!({
        "subcommand": "sweep",
        "manifest": args.manifest.display().to_string(),
        "checkpoint": args.checkpoint.display().to_string(),
        "chunks": chunks,
        "contexts": contexts,
        "threads": threads,
    });
    std::fs::create_dir_all(&args.out)?;
    write_run_config(&args.out, &run_config)?;

    let sweep = ctcdid::run_sweep(&ckpt, &test, &chunks, &contexts, threads)?;
    for cell in &sweep.cells {
        println!(
            "chunk {:>4.1}s context {:>4.1}s: F1 {:.4}",
            cell.chunk_s, cell.context_s, cell.weighted_f1
        );
    }
    let note = run_config.to_string();
    ctcdid::eval::write_sweep_csv(&args.out.join("sweep.csv"), &sweep, &note)?;
    ctcdid::eval::write_sweep_svg(&args.out.join("sweep.svg"), &sweep)?;
    ctcdid::eval::write_sweep_heatmap_svg(&args.out.join("sweep_heatmap.svg"), &sweep)?;
    Ok(())
}

// ── compare-prep ─────────────────────────────────────────────────────────

#[derive(Args)]
struct ComparePrepArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Word-counts JSONL with exact per-utterance counts.
    #[arg(long)]
    counts: PathBuf,
    /// Held-out test manifest.
    #[arg(long)]
    test_manifest: PathBuf,
    /// Heuristic speech rate (words per second).
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run_compare_prep(args: ComparePrepArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let rate = file.resolve(args.rate, "rate", ctcdid::DEFAULT_RATE_WPS)?;
    let resolved = resolve_train(&args.hyper, &file)?;

    let train_set = load_corpus(&args.manifest)?;
    let test_set = load_corpus(&args.test_manifest)?;
    let counts = read_word_counts(&args.counts)?;

    let mut run_config = train_run_config("compare-prep", &resolved);
    run_config["manifest"] = args.manifest.display().to_string().into();
    run_config["test_manifest"] = args.test_manifest.display().to_string().into();
    run_config["counts"] = args.counts.display().to_string().into();
    run_config["rate"] = rate.into();
    std::fs::create_dir_all(&args.out)?;
    write_run_config(&args.out, &run_config)?;

    let ctx = ctcdid::PrepContext {
        vad: VadConfig::default(),
        encoder: resolved.encoder.clone(),
        train: resolved.train.clone(),
        feature: resolved.feature.clone(),
    };
    let report =
        ctcdid::compare_label_prep(&train_set, &counts, &test_set, rate, &ctx, resolved.threads)?;
    for run in &report.runs {
        println!(
            "{:<16} F1 {:.4} (skipped {}, final loss {:.4})",
            run.mode, run.weighted_f1, run.skipped_utterances, run.final_loss
        );
    }
    ctcdid::eval::write_compare_csv(&args.out.join("compare.csv"), &report, &run_config.to_string())?;
    Ok(())
}
