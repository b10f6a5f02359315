use thiserror::Error;

/// Failure modes shared by every module.
///
/// The variants map one-to-one onto the command-line exit codes: bound and
/// invariant violations exit with 1, configuration problems with 2 and
/// exhausted certification budgets with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("certification budget exhausted: {0}")]
    Budget(String),
    #[error("matrix not in the image of {family} at index {index}: {reason}")]
    NotInImage {
        family: &'static str,
        index: u32,
        reason: String,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("schedule violation at l={ell}, j={j}: {reason}")]
    Schedule { ell: u32, j: u32, reason: String },
    #[error("bound violated at stage {stage}, band {band:?}: {reason}")]
    Diagnostic {
        stage: u32,
        band: Option<u32>,
        reason: String,
    },
    #[error("corrupted ensemble state: {0}")]
    CorruptedState(String),
    #[error("realization infeasible: {0}")]
    Infeasible(String),
    #[error("cell cap of {cap} exceeded ({requested} cells)")]
    CellCap { cap: usize, requested: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("pinching condition violated: {0}")]
    Pinching(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Json(_) => 2,
            Error::Budget(_) => 3,
            _ => 1,
        }
    }
}
