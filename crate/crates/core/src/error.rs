use thiserror::Error;

use crate::crossfit::Block;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared across the library.
///
/// Validation errors (shapes, bounds, configuration) are distinguished from
/// numerical failures through [`Error::is_numerical`], which the CLI maps onto
/// its exit-code taxonomy.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("division by zero at ({row}, {col})")]
    DivisionByZero { row: usize, col: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("treatment matrix must be binary: found {value} at ({row}, {col})")]
    NotBinary { row: usize, col: usize, value: f64 },

    #[error("probability {value} at ({row}, {col}) lies on the boundary of (0, 1)")]
    ProbabilityBoundary { row: usize, col: usize, value: f64 },

    #[error("no fully observed rows; missing cells include {missing:?}")]
    NoObservedRows { missing: Vec<(usize, usize)> },

    #[error("no fully observed columns; missing cells include {missing:?}")]
    NoObservedCols { missing: Vec<(usize, usize)> },

    #[error("rank {rank} is infeasible: at most {max} is supported here")]
    RankInfeasible { rank: usize, max: usize },

    #[error("rotation system is numerically singular (reciprocal condition {rcond:e})")]
    RotationSingular { rcond: f64 },

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("completion failed on block {block}: {source}")]
    Block {
        block: Block,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("row {row} is not a staggered adoption pattern: {reason}")]
    NotStaggered { row: usize, reason: String },

    #[error("arm {arm} is empty in half {half} of the unit split")]
    DegenerateSplit { arm: u8, half: u8 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RotationSingular { .. } | Error::SvdFailed => true,
            Error::Block { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(vec![msg.into()])
    }
}
