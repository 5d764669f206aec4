use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("register label `{0}` used more than once")]
    LabelCollision(String),
    #[error("unknown register label `{0}`")]
    UnknownLabel(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("operator is not hermitian (max deviation {0:.3e})")]
    NonHermitian(f64),
    #[error("observable is degenerate within tolerance")]
    Degenerate,
    #[error("kraus set is not a complete channel (completeness defect {0:.3e})")]
    IncompleteKraus(f64),
    #[error("kraus operators are not a valid operation (defect eigenvalue {0:.3e} < 0)")]
    InvalidKraus(f64),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical guard violated: {0}")]
    NumericalGuard(String),
    #[error("invariant check failed: {0}")]
    InvariantViolation(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
