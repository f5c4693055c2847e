use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] rpb_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use rpb_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Read { .. } | CliError::Checkpoint { .. } => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::DimensionMismatch { .. } | E::RejectionBudget { .. } => 2,
                E::IntegrationBlowup { .. }
                | E::GradientBlowup { .. }
                | E::Divergence { .. }
                | E::ConditionViolated { .. }
                | E::NoAdmissiblePairs => 3,
                _ => 1,
            },
            CliError::Write { .. } | CliError::Csv(_) => 1,
        }
    }
}

pub(crate) fn write_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Read {
        path: path.to_path_buf(),
        source,
    }
}
