use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Variants are grouped loosely by the layer that raises them; the CLI maps
/// [`Error::is_internal`] variants to exit code 2 and everything else to 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroNorm(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid unit embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid posterior: {0}")]
    InvalidPosterior(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {} has no samples", .0 + 1)]
    MissingClass(usize),

    #[error("class {} has no positives or no negatives", .0 + 1)]
    DegenerateClass(usize),

    #[error("at least two classes are required")]
    TooFewClasses,

    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("record {id}: embedding norm {norm} is not within 1e-6 of 1")]
    Norm { id: String, norm: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate record id {0}")]
    DuplicateId(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("grid point {point}: {source}")]
    GridPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate a broken internal invariant rather than bad input.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::InvariantViolation(_) => true,
            Error::Record { source, .. } | Error::GridPoint { source, .. } => source.is_internal(),
            _ => false,
        }
    }

    pub(crate) fn for_record(self, id: &str) -> Error {
        Error::Record {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
