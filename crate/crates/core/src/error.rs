use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("labels are all identical; need at least one 0 and one 1")]
    DegenerateLabels,

    #[error("outcome is constant; need both outcome classes")]
    DegenerateOutcome,

    #[error("column {0} is degenerate (constant or too few distinct values)")]
    DegenerateColumn(usize),

    #[error("positivity violated: propensity {0} is not strictly inside (0, 1)")]
    Positivity(f64),

    #[error("balance target is infeasible: {0}")]
    Infeasible(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("weights are all zero")]
    ZeroWeights,

    #[error("{0} group has zero total weight")]
    ZeroGroupWeight(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than
    /// by a numerical or I/O failure at run time.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::InvalidInput(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
