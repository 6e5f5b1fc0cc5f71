use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A sample, weight vector or value list does not match the expected dimension.
    #[error("arity: expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("no closed form for {0}")]
    NoClosedForm(String),

    #[error("infinite variance: {0}")]
    InfiniteVariance(String),

    #[error("no bounded differences: {0}")]
    NoBoundedDifferences(String),

    /// A parameter outside its documented domain. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("absolute continuity violated at hypothesis {0}")]
    AbsoluteContinuity(usize),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("trial {index} failed: {source}")]
    Trial {
        index: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
