use thiserror::Error;

/// Errors raised across the census pipeline.
///
/// Each variant maps to a stable `kind` string so command-line failures can be
/// emitted as single `key=value` lines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("byte offset {offset}: {message}")]
    Record { offset: u64, message: String },

    #[error("missing required column `{0}`")]
    Schema(String),

    #[error("{0}")]
    Validation(String),

    #[error("class id {0} is not in the taxonomy")]
    UnknownClass(u32),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record for image `{0}` has no calibrated car probability")]
    Uncalibrated(String),

    #[error("average precision undefined: no ground-truth boxes")]
    UndefinedAp,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("region `{0}` has no expected cars")]
    EmptyRegion(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("linear solve failed: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Record { .. } => "record",
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::UnknownClass(_) => "lookup",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Uncalibrated(_) => "state",
            Error::UndefinedAp => "undefined_ap",
            Error::ZeroVariance(_) => "zero_variance",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::EmptyRegion(_) => "empty_region",
            Error::Sampling(_) => "sampling",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
