use thiserror::Error;

/// Errors raised by the engine.
///
/// Every variant except [`Error::Io`] is a validation failure; the CLI maps
/// `Io` to exit code 3 and everything else to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not orthogonal: max |M·Mᵀ − I| = {max_deviation:.3e} exceeds {tolerance:.1e}")]
    NonOrthogonal { max_deviation: f64, tolerance: f64 },

    #[error("first-row entry m[0][{column}] = {value} is not strictly positive")]
    NonPositiveFirstRow { column: usize, value: f64 },

    #[error("{what} = {value} is not a multiple of dt = {dt}")]
    OffGrid { what: String, value: f64, dt: f64 },

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("lattice with {nodes} nodes exceeds the budget of {budget} nodes")]
    MemoryBudget { nodes: u128, budget: usize },

    #[error("node (step {step}, counts {counts:?}) does not belong to this lattice")]
    ForeignNode { step: usize, counts: Vec<u32> },

    #[error("arbitrage detected: martingale error {max_error:.3e} exceeds tolerance {tolerance:.1e} (per-level {per_level:?})")]
    Arbitrage { max_error: f64, tolerance: f64, per_level: Vec<f64> },

    #[error("no strictly positive risk-neutral measure at step {step}: {detail}")]
    NoRiskNeutralMeasure { step: usize, detail: String },

    #[error("singular system: rank {rank} < {required} (smallest singular value {smallest:.3e})")]
    Singular { rank: usize, required: usize, smallest: f64 },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
