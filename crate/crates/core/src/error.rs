use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coefficient at ({alpha:?},{beta:?}) is not the conjugate of its mirror term")]
    NonHermitian { alpha: Vec<u32>, beta: Vec<u32> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constraint {0} has no containing clique")]
    NoContainingClique(usize),
    #[error("symmetry reduction not applicable: problem has no balanced/even structure")]
    NotApplicable,

    #[error("order of constraint {0} is below its half-degree")]
    OrderTooLow(usize),
    #[error("moment {0} is not indexed by any clique basis")]
    UnindexedMoment(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("relaxation is infeasible")]
    Infeasible,
    #[error("relaxation is unbounded")]
    Unbounded,
    #[error("iteration limit reached after {0} iterations")]
    IterationLimit(usize),

    #[error("order t={t} is too low for d_K={dk}")]
    InsufficientOrder { t: u32, dk: u32 },
    #[error("shift operators do not commute (residual {0:.3e})")]
    CommutationFailure(f64),
    #[error("clique atoms disagree on shared coordinates")]
    StitchFailure,
    #[error("SOS identity residual {0:.3e} exceeds tolerance")]
    IdentityResidualTooLarge(f64),

    #[error("clique {0} carries no first-order mass")]
    DegenerateClique(usize),
    #[error("order update made no progress")]
    NoProgress,
    #[error("multi-order loop stopped after {iters} iterations (best bound {bound})")]
    MaxItersExceeded { iters: usize, bound: f64 },

    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("network is disconnected")]
    DisconnectedNetwork,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
