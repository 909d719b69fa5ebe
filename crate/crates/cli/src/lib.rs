//! Configuration-driven experiments on top of `lapbem`.

pub mod check;
pub mod config;
pub mod experiment;
pub mod table;

use lapbem::BemError;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiment::{run, RunOptions, RunOutcome};
pub use table::{merge_histories, MergedTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("stage `{stage}` failed: {source}")]
    Numerical {
        stage: String,
        #[source]
        source: BemError,
    },
    #[error("{0} of the self-checks failed")]
    Checks(usize),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for bad input, 2 for failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Schema { .. } => 1,
            CliError::Numerical { .. } | CliError::Checks(_) | CliError::Io { .. } => 2,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

/// Attaches a stage name to numerical failures.
pub(crate) trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, CliError>;
}

impl<T> Stage<T> for lapbem::Result<T> {
    fn stage(self, name: &str) -> Result<T, CliError> {
        self.map_err(|source| match source {
            BemError::Config { field, message } => CliError::Validation { field, message },
            source => CliError::Numerical {
                stage: name.into(),
                source,
            },
        })
    }
}
