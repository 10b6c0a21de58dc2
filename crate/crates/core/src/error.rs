use thiserror::Error;

/// Errors raised across the library.
///
/// The variants line up with the CLI exit-code classes: configuration and
/// domain problems are caller errors, the numerical variants are runtime
/// failures of a training run or a sampler.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required field `{0}`")]
    MissingField(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Structural(String),

    #[error("non-finite value during evaluation at step {step}: {what}")]
    Evaluation { step: usize, what: String },

    #[error("training diverged at step {step}: {what}")]
    Training { step: usize, what: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sampler failed at sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    /// True for errors caused by the caller's inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingField(_) | Error::Domain(_) | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
