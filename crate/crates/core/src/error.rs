use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,
    #[error("insufficient history: need {needed} days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("degenerate regressor: all prices identical")]
    DegenerateRegressor,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("computation graph contains a cycle")]
    GraphCycle,
    #[error("no feasible plan")]
    NoFeasiblePlan,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn csv(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }

    /// True for failures caused by the caller's data rather than a broken
    /// internal guarantee.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_) | Error::GraphCycle)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
