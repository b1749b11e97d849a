use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its constraint. `field` names the key.
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    /// An operation was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A component broke its output contract (wrong sample count, non-finite
    /// parameters, dimension mismatch). Runs abort on these.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An error raised while executing a specific round of an experiment.
    #[error("round {round}{}: {source}", device.map(|d| format!(", device {d}")).unwrap_or_default())]
    Round {
        round: usize,
        device: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed config `{path}`: {message}")]
    Syntax { path: PathBuf, message: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_round(self, round: usize, device: Option<usize>) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                device,
                source: Box::new(e),
            },
        }
    }
}
