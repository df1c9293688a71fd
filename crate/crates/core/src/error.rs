use thiserror::Error;

/// Everything that can go wrong while building or analysing a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("initial vector is not a probability vector: {0}")]
    NotStochastic(String),

    #[error("invalid sub-generator: {0}")]
    SignPattern(String),

    #[error("sub-generator is singular: phase {phase} never reaches absorption")]
    Singular { phase: usize },

    #[error("generator T + T0*alpha is reducible on the reachable phases")]
    Reducible,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable model: rho = {rho} >= 1")]
    Unstable { rho: f64 },

    #[error("moments not fittable: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot parse distribution `{input}`: {reason}")]
    Parse { input: String, reason: String },

    #[error("{0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
