use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TeachError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TeachError {
    /// Invalid counts, dimensions or budgets.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("conjugate argument {value} outside the domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("refusing to enumerate {count} subsets (limit {limit})")]
    Refused { count: u128, limit: u128 },

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<TeachError>,
    },

    #[error("round {round}, teacher {teacher}: {source}")]
    Block {
        round: usize,
        teacher: usize,
        #[source]
        source: Box<TeachError>,
    },

    /// A teaching run stopped early; `trace` holds the completed rounds.
    #[error("teaching aborted in round {round}: {source}")]
    RunAborted {
        round: usize,
        trace: Box<crate::engine::RunTrace>,
        #[source]
        source: Box<TeachError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TeachError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        TeachError::Parameter(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        TeachError::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TeachError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the name of the pipeline stage that failed.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ TeachError::Stage { .. } => already,
            other => TeachError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 1 for validation problems, 2 for numeric or
    /// convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            TeachError::Numeric(_)
            | TeachError::Convergence { .. }
            | TeachError::Domain { .. }
            | TeachError::UndefinedMetric(_) => 2,
            TeachError::Stage { source, .. }
            | TeachError::Block { source, .. }
            | TeachError::RunAborted { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
