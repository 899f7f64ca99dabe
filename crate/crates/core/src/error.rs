use thiserror::Error;

/// Errors raised by the conformal and transport routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A finite-sample level adjustment cannot be satisfied at this sample size.
    #[error("infeasible adjustment: {0}")]
    Infeasible(String),

    /// Every candidate in a parameter grid was infeasible.
    #[error("no feasible ambiguity set: {0}")]
    NoFeasibleSet(String),

    /// A failure inside one evaluation split, tagged with the split index.
    #[error("split {split}: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the CLI: 2 for parameter errors, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Infeasible(_) | Error::NoFeasibleSet(_) => 2,
            Error::Split { source, .. } => source.exit_code(),
            Error::Parse(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
