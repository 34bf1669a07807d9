//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector/matrix dimensions disagree with what the operation expects.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty observation log")]
    EmptyLog,

    /// The pilot fit only accepts exploration data (one item per period).
    #[error("pilot fit requires a log of singleton assortments")]
    NonSingletonLog,

    /// Exhaustive enumeration refused to start: the subset count is above the cap.
    #[error("enumeration of {required} subsets exceeds the cap of {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    /// A Fisher information matrix could not be inverted and no ridge was configured.
    #[error("singular Fisher information with zero ridge")]
    SingularFisher,

    /// Rejection sampling failed to produce an admissible vector.
    #[error("rejection sampling exceeded {0} attempts for a single vector")]
    RejectionCapExceeded(u64),

    /// The discretized solvers operate on scalar confidence directions only.
    #[error("operation requires d = 1 confidence directions, got d = {0}")]
    RequiresUnivariate(usize),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
