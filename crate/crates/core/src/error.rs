use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("set is not representable in closed form: {0}")]
    NotRepresentable(String),

    #[error("point {point:?} lies outside the operator domain")]
    EmptyDomain { point: Vec<f64> },

    #[error("no closed-form resolvent for {0}")]
    NoClosedForm(String),

    #[error("operator has no nonsmooth anchor to read an active manifold from: {0}")]
    NoManifold(String),

    #[error("point is not on the manifold (violation {violation:e})")]
    NotOnManifold { violation: f64 },

    #[error("vector is not a member of the set (distance {distance:e})")]
    NotAMember { distance: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("iteration did not converge: {0}")]
    NotConverged(String),
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
