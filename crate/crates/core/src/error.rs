use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Backend,
    Numerical,
    Data,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),

    #[error("empty dataset file")]
    EmptyFile,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: label value `{value}` is not in the label mapping")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("template `{template}`: expected 2 placeholders, found {found}")]
    Template { template: String, found: usize },
    #[error("backend: {0}")]
    Backend(String),
    #[error("prompt `{prompt}`: both polarity probabilities are below the floor")]
    Unscorable { prompt: String },
    #[error("probability must be positive and finite, got {0}")]
    InvalidProbability(f64),
    #[error("feature `{feature}` needs {needed} templates but only {available} are available")]
    InsufficientTemplates {
        feature: String,
        needed: usize,
        available: usize,
    },
    #[error("elicitation: {0}")]
    Elicitation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(
        "Newton iterations did not converge after {iterations} steps (max |grad| = {grad_norm:e})"
    )]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("Hessian is not positive definite (smallest eigenvalue {eigenvalue:e}); features may be collinear")]
    SingularHessian { eigenvalue: f64 },
    #[error("sampler: {0}")]
    Sampler(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. } => ErrorCategory::Io,
            Json(_) | Config(_) | Template { .. } | InsufficientTemplates { .. } => {
                ErrorCategory::Config
            }
            Backend(_) | Unscorable { .. } => ErrorCategory::Backend,
            NonFinite(_)
            | NonConvergence { .. }
            | SingularHessian { .. }
            | Sampler(_)
            | InvalidProbability(_) => ErrorCategory::Numerical,
            Csv(_)
            | EmptyFile
            | MissingColumn(_)
            | UnknownLabel { .. }
            | BadNumber { .. }
            | SingleClass
            | DimensionMismatch { .. }
            | Elicitation(_) => ErrorCategory::Data,
        }
    }
}
