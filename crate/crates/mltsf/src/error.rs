//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// Tensor construction or op with incompatible shapes.
    Shape(String),
    /// Convolution/pooling geometry that would produce an empty output.
    InvalidGeometry(String),
    /// A forward operation produced NaN or infinite values.
    NonFinite { op: &'static str },
    /// Softmax over a slice where every entry is -inf.
    UndefinedDistribution,
    /// Backward was requested for a value that does not belong to the graph.
    NoGraph,
    /// Finite-difference check aborted (non-finite objective).
    CheckAborted(String),
    /// Neighbor selection window holds fewer than k candidates.
    InfeasibleWindow { t: usize, k: usize, len: usize },
    /// Label cannot be emitted by any alignment of the given length.
    InfeasibleLabel { frames: usize, required: usize },
    /// WER over an empty reference corpus.
    UndefinedMetric,
    /// Bad configuration (unknown key, invalid value, violated constraint).
    Config(String),
    /// Structured parse failure in a feature file or checkpoint.
    Parse { path: String, offset: u64, what: String },
    /// Optimizer saw a non-finite gradient.
    NonFiniteGradient { param: String },
    /// Training loss became non-finite.
    Diverged { epoch: usize, step: usize },
    /// Checkpoint and dataset vocabularies disagree.
    VocabMismatch { checkpoint: usize, dataset: usize },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            Error::NonFinite { op } => write!(f, "non-finite values produced by {op}"),
            Error::UndefinedDistribution => {
                write!(f, "softmax over a slice with no finite entries")
            }
            Error::NoGraph => write!(f, "value was not produced by this graph"),
            Error::CheckAborted(msg) => write!(f, "gradient check aborted: {msg}"),
            Error::InfeasibleWindow { t, k, len } => write!(
                f,
                "selection window at t={t} holds {len} candidates, need k={k}"
            ),
            Error::InfeasibleLabel { frames, required } => write!(
                f,
                "label needs at least {required} frames but only {frames} are available"
            ),
            Error::UndefinedMetric => write!(f, "WER undefined: reference length is zero"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Parse { path, offset, what } => {
                write!(f, "parse error in {path} at offset {offset}: {what}")
            }
            Error::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter {param}")
            }
            Error::Diverged { epoch, step } => {
                write!(f, "training diverged at epoch {epoch}, step {step}")
            }
            Error::VocabMismatch { checkpoint, dataset } => write!(
                f,
                "vocabulary mismatch: checkpoint has {checkpoint} entries, dataset has {dataset}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
