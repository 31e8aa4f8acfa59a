use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parse failures for the binary feature-dump and model formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("stream truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("declared dimensions overflow: {what}")]
    DimOverflow { what: String },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("index ({row}, {col}) out of range for {rows}x{cols} level")]
    Index {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite value at level {level}, channel {channel}")]
    NonFinite { level: usize, channel: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("feature extraction failed at level {level}: {message}")]
    Extraction { level: usize, message: String },
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("pipeline order: {0}")]
    PipelineOrder(String),
    #[error("degenerate training set: {0}")]
    Degenerate(String),
    #[error("negative sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("recall undefined: no ground-truth boxes")]
    NoGroundTruth,
    #[error("configuration: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(#[from] FormatError),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}
