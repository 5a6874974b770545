use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polytope is empty")]
    EmptyPolytope,

    #[error("polytope is unbounded")]
    UnboundedPolytope,

    #[error("polytope is not full-dimensional")]
    LowerDimensional,

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("objective is not concave (max eigenvalue {0:e})")]
    NotConcave(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("vertex enumeration guard exceeded: {bases} bases > {guard}")]
    GuardExceeded { bases: u128, guard: u128 },

    #[error("constraint rows (A_i, -b_i) do not span R^(n+1)")]
    RankDeficient,

    #[error("singular basis")]
    SingularBasis,

    #[error("concavity cut is vacuous: every extension is infinite")]
    VacuousCut,

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, QpError>;
