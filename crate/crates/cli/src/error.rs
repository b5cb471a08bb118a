use thiserror::Error;

use metn_core::diagnostics::DiagError;
use metn_core::ensemble::EnsembleError;
use metn_core::event_store::EventStoreError;
use metn_core::mark_layer::MarkError;
use metn_core::time_layer::TimeError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("infeasible constraints for case {case}:\n{detail}")]
    Infeasible { case: String, detail: String },
    #[error("{0}")]
    Data(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible { .. } => 2,
            CliError::Data(_) | CliError::Missing(_) => 3,
        }
    }

    pub fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(EventStoreError, TimeError, MarkError, EnsembleError, DiagError, std::io::Error, serde_json::Error, csv::Error);

pub type Result<T> = std::result::Result<T, CliError>;
