use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: p_h = {0} is outside [0, 1]")]
    InvalidDist(f64),
    #[error("log score of an outcome with zero probability")]
    LogOfZero,
    #[error("invalid scoring rule: {0}")]
    InvalidRule(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid world model: {0}")]
    InvalidWorldModel(String),
    #[error("observed signal counts have zero likelihood under every world state")]
    ZeroLikelihood,
    #[error("invalid strategy ({beta_l}, {beta_h}): probabilities must lie in [0, 1]")]
    InvalidStrategy { beta_l: f64, beta_h: f64 },
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("invalid deviation profile: {0}")]
    InvalidProfile(String),
    #[error("agent index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("simulation requires a world model; the setting only carries a pairwise prior")]
    MissingWorldModel,
    #[error("no finite n satisfies the lower-bound conditions: {0}")]
    NoFiniteN(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("search budget exhausted after {nodes} utility evaluations")]
    BudgetExceeded { nodes: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
