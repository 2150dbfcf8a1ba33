use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed. `location` names the line/field when known.
    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },
    /// A structural invariant does not hold (bad link, bad config value, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration error: {message}; residuals {residuals:?}")]
    Calibration {
        message: String,
        residuals: Vec<(u32, f64)>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("enumeration budget of {0} paths exceeded")]
    Budget(usize),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_toml(path: impl Into<PathBuf>, err: toml::de::Error, text: &str) -> Self {
        let location = match err.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            }
            None => "unknown location".to_string(),
        };
        Error::Parse {
            path: path.into(),
            location,
            message: err.message().to_string(),
        }
    }
}
