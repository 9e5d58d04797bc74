use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid size {size} for {what} (minimum {min})")]
    InvalidSize {
        what: &'static str,
        size: usize,
        min: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("objective term is not C^1,1 (absolute-value kink)")]
    NotC11,
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("active constraint {index} has a numerically zero gradient")]
    DegenerateCone { index: usize },
    #[error("initial point violates inequality {index} (g = {value:e})")]
    InfeasibleStart { index: usize, value: f64 },
    #[error("matrix {what} is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { what: &'static str, lambda_min: f64 },
    #[error("missing reference saddle: {0}")]
    MissingReference(String),
    #[error("rate certification requires an equality-only program ({m} inequalities present)")]
    InequalityPresent { m: usize },
    #[error("constraint topology incompatible with the graph: {0}")]
    IncompatibleTopology(String),
    #[error("equality row {row} has no nonzero entry")]
    UncoveredRow { row: usize },
    #[error("agent {agent} read out-of-view index {index}")]
    LocalityViolation { agent: usize, index: usize },
    #[error("linear system is singular: {0}")]
    Singular(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
