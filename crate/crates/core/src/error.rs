use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("unsupported dtype {0:?}; only little-endian f32 ('<f4') is accepted")]
    UnsupportedDtype(String),

    #[error("tensor of {0} elements exceeds the 2^31-1 element limit")]
    UnsupportedSize(u64),

    #[error("corrupt tensor file: {0}")]
    CorruptFile(String),

    #[error("non-finite value at flat offset {offset}")]
    InvalidValue { offset: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("saliency map is constant and carries no localization signal")]
    DegenerateMap,

    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("region of interest covers no feature cells")]
    DegenerateRoi,

    #[error("regression delta {0} is outside the decodable range")]
    DeltaOutOfRange(f64),

    #[error("probability {value} at anchor {index} is outside (0, 1)")]
    InvalidProbability { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(&'static str),

    #[error("missing annotation file {0}")]
    MissingAnnotation(PathBuf),

    #[error("inconsistent index: {0}")]
    InconsistentIndex(String),

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
