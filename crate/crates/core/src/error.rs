use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SipError {
    #[error("no particle to move at site {site:?}")]
    EmptySource { site: Vec<i64> },

    #[error("rate list is empty, no event can fire")]
    NoEvents,

    #[error("lattice coordinate overflow on the infinite lattice")]
    Overflow,

    #[error("state space has {states} states, above the cap of {cap}")]
    CapExceeded { states: usize, cap: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("operation needs a finite torus geometry")]
    InfiniteGeometry,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, SipError>;
