//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate doc_id {doc_id:?}")]
    DuplicateId { doc_id: String },

    #[error("duplicate category id {cat_id:?} in taxonomy {taxonomy}")]
    DuplicateCategory { cat_id: String, taxonomy: String },

    #[error("category {cat_id:?} has an empty definition")]
    EmptyDefinition { cat_id: String },

    #[error("unknown category {cat_id:?}")]
    UnknownCategory { cat_id: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector: cosine similarity is undefined")]
    ZeroNorm,

    #[error("non-finite value at row {row} of {path}")]
    NonFinite { path: PathBuf, row: usize },

    #[error(
        "embedding binary length mismatch in {path}: expected {expected} bytes, found {found}"
    )]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("embedding sidecar mismatch in {path}: {reason}")]
    SidecarMismatch { path: PathBuf, reason: String },

    #[error("provider mismatch: {left} vs {right}")]
    ProviderMismatch { left: String, right: String },

    #[error("missing embeddings for provider {provider_id:?}: {reason}")]
    MissingProvider { provider_id: String, reason: String },

    #[error("empty score row: no categories to rank")]
    EmptyScoreRow,

    #[error("too few documents: need at least {min}, got {got}")]
    TooFewDocuments { min: usize, got: usize },

    #[error(
        "vote matrix is unidentifiable (all rows identical); \
         use majority_vote instead of the label model"
    )]
    Unidentifiable,

    #[error("labeling-function count mismatch: params have {params}, votes have {votes}")]
    LfCountMismatch { params: usize, votes: usize },

    #[error("inconsistent doc coverage across categories: {reason}")]
    InconsistentCoverage { reason: String },

    #[error("category order mismatch: {reason}")]
    OrderMismatch { reason: String },

    #[error("empty vocabulary: no tokens in any cluster")]
    EmptyVocabulary,

    #[error("missing output for {what}: {path}")]
    MissingOutput { what: String, path: PathBuf },

    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },

    #[error("job {job_id} failed: {reason}")]
    JobFailed { job_id: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
