//! Context-format normalization for retrieval-augmented generation, plus the
//! tooling to measure how robust a model is to where the evidence sits in a
//! long prompt.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`] generates synthetic key-value extraction benchmarks and
//!   loads question-answering datasets from JSON-lines files.
//! * [`normalizer`] segments passages into sentences and rewrites the
//!   whitespace of a fraction of them with a delimiter character.
//! * [`attention`] scores final-token attention vectors with the attention
//!   balance score and picks the best delimiter.
//! * [`metrics`] grades answers and computes overall-averaged and
//!   optimal-position accuracy.
//! * [`backend`] is the model boundary (HTTP client, trace replay and a
//!   deterministic positional-bias mock).
//! * [`harness`] runs gold-position permutation experiments, calibration,
//!   the full normalization pipeline and tokenization studies.

pub mod attention;
pub mod backend;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod normalizer;
mod seed;

pub use attention::{
    attention_balance_score, select_format, span_attention_profile, AbsResult, AttentionError,
    AttentionVector, FormatScores, Selection,
};
pub use backend::{
    Backend, BackendError, Capabilities, GenerateOptions, GenerateRequest, GenerationRecord,
    GoldProbe, MockBackend, MockModelConfig, RecordingBackend, RemoteBackend, RemoteConfig,
    ReplayBackend, ZoneWeights,
};
pub use dataset::{
    apply_format_style, generate_kv_dataset, load_qa_dataset, render_kv_prompt, save_dataset,
    Dataset, DatasetError, Document, FormatStyle, HexString, KvGenConfig, KvSample, QaSample,
    Sample,
};
pub use harness::{
    calibrate, run_cnorm_pipeline, run_permutation_experiment, run_tokenization_study,
    sweep_sample_counts, CalibrationMode, CalibrationOptions, CalibrationReport, CnormOutcome,
    ExperimentResult, FailurePolicy, HarnessError, PermutationPlan, RunOptions,
    TokenizationReport,
};
pub use metrics::{
    compute_oaa, compute_opa, pearson, score_answer, score_kv_answer, MetricSummary,
    MetricsError, PositionAccuracy,
};
pub use normalizer::{
    assemble_prompt, candidate_formats, normalize_document, reformat_sentence, segment_sentences,
    Delimiter, FormatConfig, NormalizeError, NormalizedDocument, PromptTemplate,
    DEFAULT_DELIMITERS,
};
