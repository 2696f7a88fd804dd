use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input or configuration rather than a
    /// failure while running.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Training(_) | Error::Sampling(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

/// Non-fatal condition attached to an otherwise successful result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Constant signal; normalization produced zeros.
    Degenerate,
    /// Recording too short for even one fragment.
    ShortRecord,
    /// Input shorter than the analysis window; passed through.
    TooShort,
    /// Silent input; SNR undefined, passed through.
    Silent,
    /// Fewer than two cardiac cycles; passed through.
    TooFewCycles,
}

/// A value plus an optional flag describing a degenerate-but-handled case.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flag: Option<Flag>,
}

impl<T> Flagged<T> {
    pub fn ok(value: T) -> Self {
        Self { value, flag: None }
    }

    pub fn flagged(value: T, flag: Flag) -> Self {
        Self {
            value,
            flag: Some(flag),
        }
    }

    pub fn into_value(self) -> T {
        self.value
    }
}
