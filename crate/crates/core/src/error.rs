use thiserror::Error;

/// Errors raised across the library. The CLI exits with code 2 for errors
/// where [`Error::is_input_error`] holds and 1 otherwise.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("operation requires one-dimensional measures, got dimension {0}")]
    NotOneDimensional(usize),

    #[error("probability level {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("transport instance too large: {atoms} atoms exceeds limit {limit}")]
    InstanceTooLarge { atoms: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("unknown period `{0}`")]
    UnknownPeriod(String),

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("estimation failed for unit {unit}: {source}")]
    PlaceboFit {
        unit: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error comes from malformed or inconsistent input rather
    /// than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidPanel(_)
                | Error::UnknownPeriod(_)
                | Error::UnknownUnit(_)
                | Error::NotOneDimensional(_)
                | Error::DimensionMismatch { .. }
                | Error::InstanceTooLarge { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
