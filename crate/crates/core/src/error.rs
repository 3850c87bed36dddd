use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("invalid segment {segment}: {msg}")]
    Validation { segment: String, msg: String },
    #[error("recording spans {span_ms} ms, shorter than the {window_ms} ms window")]
    Span { span_ms: u64, window_ms: u64 },
    #[error("generator configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("integration diverged at step {step}")]
    Divergence { step: usize },
    #[error("neuron {neuron}: integration diverged at step {step}")]
    NeuronDivergence { neuron: usize, step: usize },
    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },
    #[error("epoch {epoch}, sample {sample}: {source}")]
    Training {
        epoch: usize,
        sample: usize,
        source: Box<Error>,
    },
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("tape usage: {0}")]
    Usage(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("metric: {0}")]
    Metric(&'static str),
    #[error("feature: {0}")]
    Feature(&'static str),
    #[error("gradient check: {0}")]
    GradCheck(String),
    #[error("pretuning failed: {0}")]
    Pretune(String),
}
