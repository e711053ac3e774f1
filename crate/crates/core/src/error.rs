use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Storage shape does not describe a 2d x 2d two-port matrix, or two
    /// operands disagree on the channel count.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("transmission block {block} is singular (reciprocal condition {rcond:e})")]
    SingularTransmission { block: &'static str, rcond: f64 },

    #[error("transfer block {block} is singular (reciprocal condition {rcond:e})")]
    SingularBlock { block: &'static str, rcond: f64 },

    /// Two near-perfect reflectors facing each other: `1 - r_n^R r^L` cannot be inverted.
    #[error("resonant cavity while concatenating ({block} has reciprocal condition {rcond:e})")]
    ResonantCavity { block: &'static str, rcond: f64 },

    #[error("chain evolution failed at length {n}: {source}")]
    ChainFailure { n: usize, source: Box<Error> },

    #[error("not unitary: residual {residual:e} exceeds tolerance {tol:e}")]
    NotUnitary { residual: f64, tol: f64 },

    #[error("transfer matrix undefined for a perfect reflector (A = 1)")]
    DegenerateTransfer,

    #[error("marginal generator: |D| = {0:e} lies inside the exclusion band")]
    Marginal(f64),

    #[error("integral of motion undefined at A_n = 1")]
    IntegralUndefined,

    #[error("defective eigenproblem: eigenvector matrix reciprocal condition {0:e}")]
    Defective(f64),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by singular or ill-conditioned numerics rather
    /// than malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularTransmission { .. }
            | Error::SingularBlock { .. }
            | Error::ResonantCavity { .. }
            | Error::NotUnitary { .. }
            | Error::DegenerateTransfer
            | Error::Marginal(_)
            | Error::IntegralUndefined
            | Error::Defective(_)
            | Error::NonConvergence(_) => true,
            Error::ChainFailure { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
