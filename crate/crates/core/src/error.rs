use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in something outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A numerical routine broke down. `stage` names the sub-step.
    #[error("numeric failure in {stage}: {message}")]
    Numeric { stage: String, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(stage: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
            message: msg.into(),
        }
    }

    /// Prefix the stage of a numeric error with outer context, e.g. the
    /// EM iteration it happened in.
    pub(crate) fn within(self, context: &str) -> Self {
        match self {
            Error::Numeric { stage, message } => Error::Numeric {
                stage: format!("{context}/{stage}"),
                message,
            },
            other => other,
        }
    }
}
