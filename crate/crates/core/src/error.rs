use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cost matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("missing witness: {0}")]
    MissingWitness(&'static str),
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error came from a solver rather than from malformed input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Infeasible | Error::Unbounded | Error::Solver(_) | Error::DegenerateInstance(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
