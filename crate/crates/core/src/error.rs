use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("division by an expression not declared invertible: {divisor}")]
    DivisionByNonInvertible { divisor: String },
    #[error("forms live on different manifolds")]
    ContextMismatch,
    #[error("form has contact components; expected a horizontal form")]
    NotHorizontal,
    #[error("inconsistent system: {0}")]
    InconsistentSystem(String),
    #[error("relation does not solve for an external coordinate: {0}")]
    NotSolved(String),
    #[error("inconsistent covering: {0}")]
    InconsistentCovering(String),
    #[error("Euler-Lagrange expressions do not vanish on the system: {0}")]
    EulerNotVanishing(String),
    #[error("not a symmetry of the system")]
    NotASymmetry,
    #[error("operator shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tangency system not solvable: singular pivot {0}")]
    NotSolvable(String),
    #[error("free data does not determine the section: {0}")]
    UnderDetermined(String),
    #[error("tangency conditions are inconsistent: {0}")]
    OverDetermined(String),
    #[error("non-degeneracy failure: {0}")]
    NondegeneracyFailure(String),
    #[error("jet order {order} exceeds the configured limit {limit}")]
    OrderLimit { order: u32, limit: u32 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
