use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A diagonal Gram entry vanished, e.g. all path gains of a UT are zero.
    #[error("degenerate channel for UT {ut}: zero diagonal Gram entry at symbol {symbol}")]
    DegenerateChannel { ut: usize, symbol: usize },

    #[error(
        "matrix is not positive definite (pivot {pivot} = {value:e}, max diagonal {max_diag:e})"
    )]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        max_diag: f64,
    },

    #[error("pilot regions overlap: delay spacing {spacing} must exceed the CP length {cp_len}")]
    PilotOverlap { spacing: usize, cp_len: usize },

    #[error("path delay {delay} exceeds the cyclic prefix length {cp_len}")]
    DelayExceedsCp { delay: usize, cp_len: usize },

    #[error("missing effective channel for antenna {q}, UT {s}")]
    MissingChannel { q: usize, s: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
