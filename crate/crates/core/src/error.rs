use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpfError {
    #[error("angle {0} is outside [0, pi]")]
    AngleOutOfRange(f64),

    #[error("pixel intensity {0} is outside [0, 1]")]
    IntensityOutOfRange(f64),

    #[error("image dimensions {width}x{height} must both be even and non-zero")]
    OddDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },

    #[error("invalid permutation {0:?}: expected each of 0..4 exactly once")]
    InvalidPermutation(Vec<usize>),

    #[error("grid step {0} must lie in (0, pi/2]")]
    StepOutOfRange(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("requested {requested} samples from a dataset of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },

    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },

    #[error("images in one dataset must share dimensions")]
    MixedDimensions,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("hidden layers {0:?} are not one of the supported ladders")]
    UnsupportedLadder(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated, needed {needed} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("{path}: dimension product overflows")]
    DimensionOverflow { path: PathBuf },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QpfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        QpfError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by files: missing, unreadable or malformed.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            QpfError::BadMagic { .. }
                | QpfError::Truncated { .. }
                | QpfError::DimensionOverflow { .. }
                | QpfError::Format { .. }
                | QpfError::Io { .. }
                | QpfError::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, QpfError>;
