use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown category {value:?} for feature {feature:?}")]
    UnknownCategory { feature: String, value: String },
    #[error("value {value:?} out of range for feature {feature:?}")]
    OutOfRange { feature: String, value: String },
    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("model adapter unavailable: {0}")]
    AdapterDown(String),
    #[error("protocol violation: {detail}")]
    ProtocolViolation { detail: String },
    #[error("adapter reported error for request {id}: {msg}")]
    AdapterError { id: u64, msg: String },

    #[error("surrogate design matrix is singular; increase n_perturb")]
    SingularFit,
    #[error("position {position} does not appear in the explanation")]
    NotInExplanation { position: usize },

    #[error("malformed triple at line {line}")]
    MalformedTriple { line: usize },
    #[error("no counterpart pair for {word:?} under {attr:?}")]
    NoPairAvailable { word: String, attr: String },
    #[error("word {0:?} is not in the embedding store")]
    OovWord(String),

    #[error("dataset has no position related to a protected attribute")]
    NoSensitiveFeature,
    #[error("no seed sample qualified; raise epsilon")]
    EmptySeedSet,

    #[error("covariance rank below 2")]
    DegenerateData { points: Vec<(f64, f64)> },
    #[error("need {needed} discriminatory records, only {available} available")]
    NotEnoughRecords { needed: usize, available: usize },
    #[error("holdout and augmentation records share dedupe key {key:?}")]
    HoldoutOverlap { key: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
