use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate image `{id}`: pixel standard deviation is zero")]
    DegenerateImage { id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("FITS parse error at card {card}: {msg}")]
    FitsParse { card: usize, msg: String },

    #[error("unsupported FITS format: {0}")]
    UnsupportedFormat(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Internal,
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension { .. } | Error::Parameter(_) | Error::Config(_) => ErrorClass::Config,
            Error::DegenerateImage { .. }
            | Error::FitsParse { .. }
            | Error::UnsupportedFormat(_)
            | Error::Manifest(_)
            | Error::Corrupt(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Numeric(_) | Error::Undefined(_) => ErrorClass::Numeric,
            Error::Contract(_) => ErrorClass::Internal,
        }
    }
}
