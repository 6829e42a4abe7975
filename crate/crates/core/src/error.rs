use thiserror::Error;

/// Errors raised by the library.
///
/// The variants split into two families that the CLI maps to different exit
/// codes: configuration problems (bad specs, bad weights, unknown keys) and
/// numerical failures (non-convergent quadrature, singular systems).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariate specification: {0}")]
    InvalidCovariate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("enumeration needs {required:.3e} paths, budget is {budget:.0e}; reduce n or the number of strata")]
    BudgetExceeded { required: f64, budget: f64 },

    #[error("truncated chain leaks {mass:.3e} probability mass per step (limit {limit:.0e}); increase the truncation radius")]
    Truncation { mass: f64, limit: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidCovariate(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
