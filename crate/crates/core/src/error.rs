use std::path::PathBuf;

use thiserror::Error;

use crate::model::checkpoint::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("softmax row {row} is fully masked")]
    DegenerateMask { row: usize },

    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("eigen solver did not converge after {iterations} iterations")]
    IterationLimit { iterations: usize },

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("sequence of length {len} is shorter than filter length {filter_len}")]
    TooShort { len: usize, filter_len: usize },

    #[error("projection vector has zero norm")]
    ZeroProjector,

    #[error("series is constant (zero variance)")]
    ConstantSeries,

    #[error("segment `{segment}` has {len} steps, need at least {needed}")]
    InsufficientData {
        segment: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("consistency: {0}")]
    Consistency(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<Checkpoint>,
    },

    #[error("empty split `{0}`")]
    EmptySplit(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
