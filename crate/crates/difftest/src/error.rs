use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// S(x, alpha) failed the positive-definiteness check (assumption A3
    /// violated at this evaluation point).
    #[error("S(x, alpha) not positive definite: min eigenvalue {min_eig:e} <= floor {floor:e}")]
    NotPositiveDefinite { min_eig: f64, floor: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("observation times are not equally spaced at row {row}")]
    UnequalSpacing { row: usize },

    #[error("malformed observation file at row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("every optimizer start failed (S not positive definite over the search box)")]
    AllStartsFailed,

    #[error("model has no invariant density; limit criteria need one")]
    MissingInvariantDensity,

    /// A test statistic came out more negative than optimizer noise can
    /// explain; one of the fits did not reach its optimum.
    #[error("optimizer inconsistency: {statistic} = {value:e} below clamp tolerance")]
    OptimizerInconsistency { statistic: &'static str, value: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("more than 20% of replications failed ({failed}/{total})")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
