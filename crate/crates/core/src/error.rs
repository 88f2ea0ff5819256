use std::path::PathBuf;

use thiserror::Error;

/// Errors from reading, validating, or writing record files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed {kind}: {source}")]
    Parse {
        kind: &'static str,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {kind} `{id}` has invalid field `{field}`: {reason}")]
    Invalid {
        kind: &'static str,
        line: usize,
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: duplicate {kind} id `{id}`")]
    Duplicate {
        kind: &'static str,
        line: usize,
        id: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors surfaced by the chat-completion client.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("invalid chat request: {0}")]
    Request(String),
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
    #[error("gave up after {attempts} attempts (last status {}): {message}", .last_status.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("malformed completion response: {0}")]
    Decode(String),
}

impl GatewayError {
    /// HTTP status of the final failed attempt, when there was one.
    pub fn status(&self) -> Option<u16> {
        match self {
            GatewayError::Permanent { status, .. } => Some(*status),
            GatewayError::Exhausted { last_status, .. } => *last_status,
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no keywords recognized in extraction reply: {0:?}")]
    EmptyExtraction(String),
    #[error("rewrite reply was blank")]
    BlankRewrite,
    #[error("keyword set is empty")]
    NoKeywords,
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid rewrite settings: {0}")]
    Config(String),
    #[error("cannot sample {requested} pairs from a dataset of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("{failed} of {total} items failed, above the 10% tolerance")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line} is corrupt: {source}")]
    Corrupt {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint {path} belongs to a different job (fingerprint {found}, expected {expected})")]
    Mismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("object corpus is empty")]
    EmptyCorpus,
    #[error("questions_per_image must be a positive even number, got {0}")]
    OddQuestionsPerImage(usize),
    #[error("{kind} question `{id}` violates the schema: {reason}")]
    Schema {
        kind: &'static str,
        id: String,
        reason: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("question list is empty")]
    EmptyBank,
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("{failed} of {total} questions failed transport, above the 10% tolerance")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no questions were evaluated")]
    Empty,
    #[error("question/verdict mismatch: {0}")]
    Mismatch(String),
    #[error("reports were computed on different question banks ({baseline} vs {treated})")]
    BankMismatch { baseline: String, treated: String },
    #[error("report for `{model}` is inconsistent: {reason}")]
    Inconsistent { model: String, reason: String },
    #[error("nothing to render")]
    NothingToRender,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
