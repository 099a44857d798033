use thiserror::Error;

use spectranet_autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing artifact {artifact}: run `{stage}` first")]
    MissingArtifact { artifact: String, stage: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code of the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Autodiff(AutodiffError::NonFiniteGradient { .. }) => 4,
            Error::Autodiff(AutodiffError::Config(_)) => 2,
            _ => 1,
        }
    }
}
