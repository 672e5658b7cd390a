use thiserror::Error;

/// Errors raised by the numerical layer.
///
/// The variants are grouped by what went wrong: bad input, a violated
/// numerical assumption, or an exhausted resource budget. The CLI maps
/// these groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("eigensolver failed to converge: {0}")]
    EigensolverFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular resolvent solve (condition estimate {cond:.3e})")]
    SingularSolve { cond: f64 },

    #[error("dominant eigenvalue is not isolated (gap {gap:.3e})")]
    DegenerateDominant { gap: f64 },

    #[error("dominant eigenvector is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NonPositiveEigenvector { min_eig: f64 },

    #[error("non-convex potential data at grid indices {indices:?}")]
    NonConvexInput { indices: Vec<usize> },

    #[error("count truncation too small: tail mass {tail_mass:.3e} at K_max={k_max}, try K_max={suggested}")]
    TailMassExceeded {
        tail_mass: f64,
        k_max: usize,
        suggested: usize,
    },

    #[error("quadrature grid with {nodes} nodes exceeds the cap of {cap}")]
    QuadratureOverflow { nodes: usize, cap: usize },

    #[error("dark state: no further jump occurs (survival floor {survival_floor:.3e})")]
    DarkState { survival_floor: f64 },

    #[error("conditioning acceptance rate {rate:.3e} is below {threshold:.1e}")]
    InsufficientAcceptance { rate: f64, threshold: f64 },
}

impl Error {
    /// True for failures of a numerical assumption (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Parse(_) | Error::Validation(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
