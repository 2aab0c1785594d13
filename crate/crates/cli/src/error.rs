use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io { .. } => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Numerical(_) => "numerical",
            Self::Io { .. } => "io",
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() })
            .expect("report serialises")
    }
}

impl From<pmcmc::Error> for CliError {
    fn from(e: pmcmc::Error) -> Self {
        use pmcmc::Error as E;
        match e {
            E::Config(_)
            | E::Unsupported(_)
            | E::Domain(_)
            | E::DimensionMismatch { .. }
            | E::MissingSuffStats
            | E::InvalidLabel { .. }
            | E::DuplicateMember(_)
            | E::InvalidSimplex(_) => Self::Config(e.to_string()),
            E::InvalidState(_)
            | E::NumericalDegeneracy(_)
            | E::CollapseDominated { .. }
            | E::Weights(_)
            | E::DegenerateSeries => Self::Numerical(e.to_string()),
        }
    }
}
