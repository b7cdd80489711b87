use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("enumeration budget exceeded: {profiles} profiles > budget {budget}; reduce N or K")]
    BudgetExceeded { profiles: u128, budget: u128 },

    #[error("best-response dynamics did not converge within {max_iters} iterations")]
    NoConvergence {
        max_iters: usize,
        trajectory: Vec<Vec<usize>>,
    },

    #[error("training diverged at episode {episode}, step {step}: {what}")]
    Diverged {
        episode: usize,
        step: usize,
        what: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Dimension { .. } => "dimension",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
