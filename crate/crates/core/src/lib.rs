//! Dialect identification trained like a tiny ASR system: targets are the
//! utterance's dialect tag repeated once per estimated word, the model
//! learns frame-level tags under the CTC loss, and inference decodes
//! greedily and majority-votes the utterance label. Works batch or as
//! chunked pseudo-streaming with a left-context window.
//!
//! Everything runs on the CPU with no ML framework: log-mel features, a
//! small convolutional frame classifier with hand-derived backprop, the
//! CTC forward-backward loss in log space, and an energy VAD supplying the
//! speech duration that drives target lengths.

pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod encoder;
pub mod eval;
pub mod labels;
pub mod mat;
pub mod par;
pub mod plot;
pub mod streaming;
pub mod vad;

pub use corpus::{
    load_utterances, load_wav, read_manifest, split_corpus, synthesize_corpus,
    synthesize_corpus_detailed, write_manifest, write_wav, CorpusError, Manifest, ManifestEntry,
    SynthSpec, SynthUtterance, Utterance, SAMPLE_RATE,
};
pub use ctc::{
    collapse, ctc_feasible, ctc_loss_grad, greedy_decode, CtcError, CtcResult, ExtendedTarget,
    FrameLogits, FRAME_RATE,
};
pub use decode::{majority_vote, Prediction, UNKNOWN_LABEL};
pub use encoder::{
    example_loss_and_grad,
    extract_features, forward, prepare_examples, train, Checkpoint, CheckpointError,
    EncoderConfig, EncoderParams, FeatureConfig, FeatureError, TrainConfig, TrainError,
    TrainEvent, TrainExample, TrainReport, CHECKPOINT_MAGIC,
};
pub use eval::{
    compare_label_prep, duration_bin_report, evaluate_batch, evaluate_streaming, predict_batch,
    run_sweep, weighted_f1, ConfusionMatrix, DurationReport, EvalError, LabelPrepReport,
    PrepContext, SweepResult,
};
pub use labels::{
    build_target, estimate_word_count, estimate_word_count_with, prepare_targets, read_targets,
    write_targets, LabelError,
    PreparedTarget, TargetSequence, Vocabulary, WordCountProvider, BLANK_TOKEN, DEFAULT_RATE_WPS,
    SPACE_TOKEN,
};
pub use mat::Mat;
pub use streaming::{
    stream_chunks, stream_infer, stream_predict, ChunkOutput, StreamConfig, StreamError,
    StreamState,
};
pub use vad::{detect_speech, EnergyVad, SpeechDetector, SpeechSegments, VadConfig};
