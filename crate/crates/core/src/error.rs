use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence {sequence} has no non-CLS tokens to average")]
    DegenerateSequence { sequence: usize },
    #[error("layer {layer} out of range 1..={n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("class {class} has no members")]
    EmptyClass { class: u32 },
    #[error("at least 2 classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("class {class}: requested {requested} samples but only {available} available")]
    InsufficientData {
        class: u32,
        requested: usize,
        available: usize,
    },
    #[error("dataset was pooled with {stored:?} at ingest, cannot re-pool with {requested:?}")]
    PoolingMismatch {
        stored: crate::PoolingMode,
        requested: crate::PoolingMode,
    },
    #[error("operation requires token-level states but the dataset is pooled")]
    NotTokenLevel,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic {found:?} at byte 0, expected \"HSD1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated file: expected {needed} more bytes at byte offset {offset}")]
    Truncated { offset: u64, needed: usize },
    #[error("non-finite value at byte offset {offset}")]
    NonFinitePayload { offset: u64 },
    #[error("label {label} at byte offset {offset} outside 0..{n_classes}")]
    LabelOutOfRange {
        offset: u64,
        label: i64,
        n_classes: u32,
    },
    #[error("invalid header field at byte offset {offset}: {reason}")]
    InvalidHeader { offset: u64, reason: String },
    #[error("line {line}: {reason}")]
    Jsonl { line: usize, reason: String },
    #[error("line {line}: dimension mismatch, expected {expected} got {found}")]
    DimensionMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("malformed report {path}: {reason}")]
    Report { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("order mismatch: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("regression undefined: {0}")]
    UndefinedFit(&'static str),
    #[error("smoothness undefined: {0}")]
    UndefinedSmoothness(&'static str),
    #[error("curve contains the +inf sentinel at layer {layer}")]
    SentinelInCurve { layer: usize },
    #[error("all curve values are +inf")]
    AllInfinite,
    #[error("k-means left cluster {cluster} empty after re-seeding")]
    DegenerateClustering { cluster: usize },
    #[error("training diverged at epoch {epoch} (loss is not finite); lower the step size")]
    Divergence { epoch: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("score {score} requires binary labels, found label {label}")]
    LabelArity { score: &'static str, label: u32 },

    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_layer(layer: usize, source: Error) -> Self {
        Error::AtLayer {
            layer,
            source: Box::new(source),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            AtLayer { source, .. } => source.kind(),
            InvalidArgument(_) | LayerOutOfRange { .. } => ErrorKind::Usage,
            NonFiniteMatrix
            | NotSymmetric(_)
            | UndefinedCorrelation(_)
            | UndefinedFit(_)
            | UndefinedSmoothness(_)
            | SentinelInCurve { .. }
            | AllInfinite
            | DegenerateClustering { .. }
            | Divergence { .. }
            | Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
