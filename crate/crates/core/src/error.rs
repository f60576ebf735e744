use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an on-disk bundle violates an invariant.
    #[error("validation error in {record}, field `{field}`: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },

    /// Training-set construction failed (missing POI category, no raster overlap, ...).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Non-finite values appeared during a forward pass or optimisation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// An object was used before it was ready (e.g. predicting with an unfitted forest).
    #[error("state error: {0}")]
    State(String),

    /// A metric is undefined for the given input (zero variance, too few points).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
