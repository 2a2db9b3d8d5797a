//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problems in tabular input: missing cells, non-numeric
    /// values, absent required columns. Row/column are 1-based and count the
    /// header as row 1, matching what a user sees in a spreadsheet.
    #[error("data error at row {row}, column {col} ({name}): {msg}")]
    Csv {
        row: usize,
        col: usize,
        name: String,
        msg: String,
    },

    /// Dataset fails a semantic precondition (dimension mismatch, non-finite
    /// entry, missing measurement-error scale, too few observations).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A response vector unusable for fitting (e.g. zero variance).
    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    /// Configuration rejected during schema validation.
    #[error("config error: {0}")]
    Config(String),

    /// Posterior-draw container malformed or version-incompatible.
    #[error("draws container error: {0}")]
    DrawsFormat(String),

    /// Non-finite quantity surfaced mid-run; carries the offending
    /// observation where known.
    #[error("non-finite {what} at observation {observation}")]
    NonFinite { what: String, observation: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
