use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid law parameters: {0}")]
    InvalidLaw(String),

    #[error("process is not subcritical: E[X] = {mean}")]
    NotSubcritical { mean: f64 },

    #[error("E[X e^(tX)] > 0 at t = 1 but has no root in (0, 1)")]
    NoBetaRoot,

    #[error("exponential moment E[e^({t} X)] is infinite")]
    NonFiniteMoment { t: f64 },

    #[error("index out of range: i = {i}, n = {n}, walk length {len}")]
    IndexError { i: usize, n: usize, len: usize },

    #[error("walk functionals overflow the floating point range")]
    Overflow,

    #[error("walk must be driftless, but E[X] = {drift}")]
    NonZeroDrift { drift: f64 },

    #[error("rejection sampler gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },

    #[error("series did not reach its truncation tolerance within {max_len} terms")]
    TruncationNotReached { max_len: usize },

    #[error("population of {size} exceeds cap {cap}")]
    PopulationOverflow { size: u64, cap: u64 },

    #[error("wrong regime: target needs {expected}, law is {found}")]
    WrongRegime { expected: String, found: String },

    #[error("lattice laws are not admissible for intermediate or weakly subcritical targets")]
    LatticeLaw,

    #[error("exponents must satisfy 0 < lambda1 < lambda2, got {lambda1}, {lambda2}")]
    BadExponents { lambda1: f64, lambda2: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
