use thiserror::Error;

/// Errors raised by the simulators, quadrature routines and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violates a documented invariant (bad matrix, negative mass, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller-side precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A query fell outside the materialized domain of an object.
    #[error("out of range: {0}")]
    Range(String),

    /// Adaptive quadrature ran out of budget before meeting its tolerance.
    #[error(
        "quadrature did not converge: last estimate {estimate:e}, previous {previous:e}, \
         error estimate {error:e} > tolerance {tolerance:e}"
    )]
    NonConvergent {
        estimate: f64,
        previous: f64,
        error: f64,
        tolerance: f64,
    },

    /// The expected number of jumps in a single step exceeds the overflow guard.
    #[error("step too large: {expected:e} expected jumps per step exceeds guard {guard:e}")]
    StepSize { expected: f64, guard: f64 },

    /// A state carries no jump mass where the scheme needs some.
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// Floating point overflow that log-space rescaling could not avoid.
    #[error("numeric overflow: {0}")]
    Overflow(String),

    /// Solving for the potential-scheme step size failed at a given position.
    #[error("step-size solve failed at position {position}: {reason}")]
    PsiSolve { position: f64, reason: String },

    /// Configuration that is syntactically fine but cannot be honoured.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Precondition(_)
                | Error::Range(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
