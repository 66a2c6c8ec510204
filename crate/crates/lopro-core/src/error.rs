//! Error type shared across the crate.

use thiserror::Error;

/// Failure modes for decomposition, rotation planning, quantization, and
/// container handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Block geometry cannot tile the requested width.
    #[error("invalid block geometry: {0}")]
    Geometry(String),

    /// An iterative numerical routine could not proceed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A byte stream does not hold a well-formed container.
    #[error("malformed container: {0}")]
    Format(String),

    /// Underlying file I/O failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; names the stage for diagnostics.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the name of the pipeline stage it occurred in.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error message, without stage framing.
    pub fn root_message(&self) -> String {
        match self {
            Error::Stage { source, .. } => source.root_message(),
            other => other.to_string(),
        }
    }
}

/// Extension for attaching stage names to results.
pub trait StageExt<T> {
    /// Tags the error side with a pipeline stage name.
    fn at_stage(self, stage: &'static str) -> Result<T, Error>;
}

impl<T> StageExt<T> for Result<T, Error> {
    fn at_stage(self, stage: &'static str) -> Result<T, Error> {
        self.map_err(|e| e.at_stage(stage))
    }
}
