use thiserror::Error;

/// Everything that can go wrong inside `pag-core`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty reduction in {op}")]
    EmptyReduction { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range (len {len}) in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeFrozen,
    #[error("requested {requested} neighbors but only {available} candidates exist")]
    TooManyNeighbors { requested: usize, available: usize },
    #[error("empty point set")]
    EmptySource,
    #[error("cannot sample {requested} points from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("centroid set mismatch: {0}")]
    CentroidSet(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-numeric token {token:?}")]
    BadToken { line: usize, token: String },
    #[error("line {line}: unsupported column count {count} (want 3, 4, 6 or 7)")]
    ColumnCount { line: usize, count: usize },
    #[error("no points in file")]
    EmptyFile,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
