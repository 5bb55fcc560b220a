use thiserror::Error;

/// Errors raised by the SROS, encoding, kernel and GP routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("partition id {id} out of range in column {column}, row {row} (bound {bound})")]
    IdOutOfRange {
        column: usize,
        row: usize,
        id: u32,
        bound: usize,
    },

    #[error("partitions are not nested: column {fine} does not refine column {coarse}")]
    NotNested { coarse: usize, fine: usize },

    #[error("coefficients are not constant within cell {cell} of column {column}")]
    NotCellConstant { column: usize, cell: u32 },

    #[error("matrix is not positive definite: column {column}, cell {cell}, 1 + z = {value:e}")]
    NotPositiveDefinite { column: usize, cell: u32, value: f64 },

    #[error("weight vector invalid: {0}")]
    InvalidWeights(String),

    #[error("tied theta entries at positions {0} and {1}; gradient undefined")]
    TiedTheta(usize, usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
