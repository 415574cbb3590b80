use thiserror::Error;

pub type Result<T> = std::result::Result<T, McglmError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum McglmError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value fell outside the domain of a link or variance function.
    #[error("domain error at index {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("invalid dispersion: {0}")]
    InvalidDispersion(String),

    /// Cholesky factorization failed. `tau` carries the dispersion
    /// parameters in effect when the failure happened, if known.
    #[error("matrix is not positive definite ({context}); tau = {tau:?}")]
    NotPositiveDefinite { context: String, tau: Vec<f64> },

    #[error("singular sensitivity: response {response}, column {column} is linearly dependent")]
    SingularSensitivity { response: usize, column: usize },

    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    #[error("hypothesis is not testable: {0}")]
    NonTestable(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("incompatible predictors across responses: {0}")]
    IncompatiblePredictors(String),

    #[error("term error: {0}")]
    Term(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("degenerate hypothesis grid: {0}")]
    DegenerateGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step halving exhausted after {halvings} halvings: {reason}")]
    StepHalvingExhausted { halvings: usize, reason: String },

    #[error("study aborted: {failures} of {replicates} replicate fits failed at n = {n}")]
    StudyAborted {
        n: usize,
        failures: usize,
        replicates: usize,
    },
}

impl McglmError {
    pub(crate) fn not_pd(context: impl Into<String>) -> Self {
        McglmError::NotPositiveDefinite {
            context: context.into(),
            tau: Vec::new(),
        }
    }

    /// True for errors that signal an infeasible point in parameter space
    /// (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            McglmError::NotPositiveDefinite { .. }
                | McglmError::Domain { .. }
                | McglmError::InvalidDispersion(_)
        )
    }
}
