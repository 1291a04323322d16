use thiserror::Error;

/// Errors raised by the sizing, estimation and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series or solver failed to converge: {0}")]
    Convergence(String),

    #[error("degrees of freedom: need n > p + q, got n = {n}, p = {p}, q = {q}")]
    DegreesOfFreedom { n: usize, p: usize, q: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("elicited quadratic has no interior maximum (d3 = {0})")]
    NoInteriorMaximum(f64),

    #[error("infeasible availability pattern: {0}")]
    InfeasiblePattern(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("invalid probability {value} at decision time {t}")]
    InvalidProbability { t: usize, value: f64 },

    #[error("insufficient replicates: decision time {t} has only {count} available samples")]
    InsufficientReps { t: usize, count: usize },

    #[error("(I - H) is ill-conditioned for subject {subject} (condition number {cond:e})")]
    IllConditioned { subject: usize, cond: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("model is missing calibration: {0}")]
    MissingCalibration(String),

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
