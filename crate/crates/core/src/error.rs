use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("entry {value} at ({row}, {col}) is not a probability")]
    InvalidProbability { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, deviation from 1 exceeds 1e-6")]
    RowSum { row: usize, sum: f64 },
    #[error("unknown transition matrix '{0}' (known: fashion05, fashion06)")]
    UnknownMatrix(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("forward cache does not match the model or gradient: {0}")]
    StaleCache(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("loss kind '{0}' requires a transition matrix")]
    MissingTransition(&'static str),
    #[error("matrix is singular even after identity mixing")]
    Singular,
    #[error("no samples carry noisy label {class}")]
    MissingClass { class: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error("run {run} (seed {seed}): {source}")]
    Run {
        run: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
