//! Crate-wide error type and result alias.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, estimation, optimization, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument was rejected (non-finite, non-positive variance, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Shapes of two related containers disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An index fell outside the valid range of its container.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange {
        /// Offending index.
        index: usize,
        /// Length of the indexed container.
        len: usize,
    },

    /// A CSV cell could not be parsed as a number.
    #[error("csv parse error in {path} at row {row}, column {col}: {msg}")]
    CsvParse {
        /// File the row came from.
        path: String,
        /// 1-based data row number.
        row: usize,
        /// 1-based column number.
        col: usize,
        /// Parser detail.
        msg: String,
    },

    /// Rows of a CSV file had inconsistent widths.
    #[error("csv shape error in {path}: {msg}")]
    CsvShape {
        /// File the row came from.
        path: String,
        /// Detail.
        msg: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// The optimizer produced a non-finite parameter vector. Carries the
    /// per-iteration trace accumulated up to the failure for post-mortems.
    #[error("optimizer diverged at iteration {iteration}: non-finite parameter update")]
    Diverged {
        /// Iteration at which a non-finite coordinate first appeared.
        iteration: usize,
        /// Trace rows accumulated before the failure.
        trace: Vec<crate::metrics::TraceRow>,
    },
}
