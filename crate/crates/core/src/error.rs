use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has no nonzero entries")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty screen set")]
    EmptySet,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("infeasible marginal: {0}")]
    InfeasibleMarginals(String),
    #[error("vector norm {norm} is not 1")]
    NotNormalized { norm: f64 },
    #[error("unknown screenshot id `{0}`")]
    UnknownScreenshotId(String),
    #[error("unknown app id `{0}`")]
    UnknownAppId(String),
    #[error("unknown label set `{0}`")]
    UnknownLabelSet(String),
    #[error("degenerate set: {0}")]
    DegenerateSet(String),
    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("embedding file {path} is corrupt: {reason}")]
    EmbeddingFileCorrupt { path: PathBuf, reason: String },
    #[error("duplicate app id `{0}`")]
    DuplicateAppId(String),
    #[error("duplicate screenshot id `{0}`")]
    DuplicateScreenshotId(String),
    #[error("unsupported image format: {0}")]
    UnsupportedImageFormat(String),
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("encoder returned {got} values, expected {expected}")]
    EncoderShapeMismatch { expected: usize, got: usize },
    #[error("template `{0}` must contain {{category}} exactly once")]
    BadTemplate(String),
    #[error("category `{0}` has no label embedding")]
    UnknownCategory(String),
    #[error("sample too small or degenerate: {0}")]
    DegenerateSample(String),
    #[error("pair table incomplete: {0}")]
    IncompleteTable(String),
    #[error("no app qualifies for the study")]
    EmptyStudy,
    #[error("solver did not terminate: {0}")]
    Solver(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, shared by the CLI and the HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroVector => "ZeroVector",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptySet => "EmptySet",
            Error::EmptyDataset => "EmptyDataset",
            Error::InfeasibleMarginals(_) => "InfeasibleMarginals",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::UnknownScreenshotId(_) => "UnknownScreenshotId",
            Error::UnknownAppId(_) => "UnknownAppId",
            Error::UnknownLabelSet(_) => "UnknownLabelSet",
            Error::DegenerateSet(_) => "DegenerateSet",
            Error::ManifestParse(_) => "ManifestParseError",
            Error::EmbeddingFileCorrupt { .. } => "EmbeddingFileCorrupt",
            Error::DuplicateAppId(_) => "DuplicateAppId",
            Error::DuplicateScreenshotId(_) => "DuplicateScreenshotId",
            Error::UnsupportedImageFormat(_) => "UnsupportedImageFormat",
            Error::EncoderUnavailable(_) => "EncoderUnavailable",
            Error::EncoderShapeMismatch { .. } => "EncoderShapeMismatch",
            Error::BadTemplate(_) => "BadTemplate",
            Error::UnknownCategory(_) => "UnknownCategory",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::IncompleteTable(_) => "IncompleteTable",
            Error::EmptyStudy => "EmptyStudy",
            Error::Solver(_) => "SolverError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}
