use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("layer `{layer}`: {msg}")]
    Shape { layer: String, msg: String },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter key mismatch; only in first: {only_left:?}, only in second: {only_right:?}")]
    KeyMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("shape mismatch for `{key}`: {left:?} vs {right:?}")]
    ParamShape {
        key: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("incompatible architectures: {0}")]
    Incompatible(String),

    #[error("position {position} outside [0, {max}]")]
    PositionOutOfRange { position: f64, max: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate probe variance")]
    DegenerateVariance,

    #[error("not enough classes: need {needed}, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Csv(#[from] CsvError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while reading or writing a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("architecture fingerprint mismatch: file {found:#018x}, expected {expected:#018x}")]
    Fingerprint { found: u64, expected: u64 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Failures while ingesting a CSV feature table.
#[derive(Debug, Error)]
pub enum CsvError {
    #[error("missing label column `{0}`")]
    MissingLabelColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("csv parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
