use std::path::PathBuf;

use crate::model::ValidationReport;
use crate::Rat;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(ValidationReport),
    #[error("an unbounded dismiss offset is not supported: the job chain would be infinite")]
    UnboundedDismiss,
    #[error("invalid supply curve: {0}")]
    InvalidCurve(String),
    #[error("invalid supply model: {0}")]
    InvalidSupply(String),
    #[error("time {t} outside curve domain [0, {horizon}]")]
    Domain { t: Box<Rat>, horizon: Box<Rat> },
    #[error("operation requires a supply model in {expected} mode")]
    ModeMismatch { expected: &'static str },
    #[error("state budget exceeded: more than {limit} chain states")]
    StateBudgetExceeded { limit: usize },
    #[error("stationary system is singular: nullspace dimension {nullity} (expected 1)")]
    SingularSystem { nullity: usize },
    #[error("enumeration of {realizations} realizations exceeds the budget of {budget}")]
    EnumerationBudget { realizations: String, budget: u64 },
    #[error("concrete supply is not sandwiched by the bounds: {0}")]
    SandwichViolation(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {0:?} (expected \"dmr-kit/1\")")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
