use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient subjects: need at least 2, found {0}")]
    InsufficientSubjects(usize),

    #[error("label out of range: {label} not in [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid probability distribution: sums to {0}")]
    InvalidDistribution(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("normalization error: torso length {0} m is too small")]
    Normalization(f64),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown schema version {0}")]
    SchemaVersion(u32),

    #[error("class {0} has no members")]
    MissingClass(usize),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("perplexity {perplexity} is infeasible for {n} points")]
    InfeasiblePerplexity { perplexity: f64, n: usize },

    #[error("unknown case: {0}")]
    UnknownCase(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),

    #[error("fewer than {needed} features available ({got})")]
    TooFewFeatures { needed: usize, got: usize },

    #[error("insufficient cases: {0}")]
    InsufficientCases(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
