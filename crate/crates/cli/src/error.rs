use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("dataset spec '{spec}': {reason}")]
    Dataset { spec: String, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// A training failure, with the seed, task and phase it happened in.
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: prer_core::Error,
    },
    #[error(transparent)]
    Core(#[from] prer_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
