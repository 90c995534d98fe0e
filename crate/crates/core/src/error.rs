use thiserror::Error;

/// Errors produced by the library. Each variant maps onto one of the CLI
/// exit-code classes (configuration, infeasibility, runtime).
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{failed} of {total} trials failed (limit is 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input (config, validation, parse).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Validation(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::Index { index, len })
    }
}
