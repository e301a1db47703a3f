use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("pixel ({i}, {j}) outside {height}x{width} image")]
    OutOfBounds {
        i: usize,
        j: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("character generation exhausted after {retries} rejected attempts (seed {seed})")]
    GenerationExhausted { seed: u64, retries: u32 },
    #[error("joint {joint} angle {angle} exceeds the +/-pi/2 limit")]
    JointLimit { joint: usize, angle: f64 },
    #[error("loss mask selects no elements")]
    EmptyMask,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("resolution {height}x{width} is not divisible by patch size {patch}")]
    IndivisibleResolution {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("{count} reference images supplied; at most 4 are supported")]
    TooManyReferences { count: usize },
    #[error("unsupported camera injection mode '{0}'")]
    UnsupportedMode(String),
    #[error("data source exhausted after {0} samples")]
    DataExhausted(usize),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("image {height}x{width} is smaller than the 11x11 SSIM window")]
    TooSmall { height: usize, width: usize },
    #[error("{frames} frames supplied; at least {required} required")]
    TooFewFrames { frames: usize, required: usize },
    #[error("bad image: {0}")]
    BadImage(String),
}

impl Error {
    /// Stable machine-readable code used in `ERROR:<code>:<detail>` lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateCamera(_) => "DegenerateCamera",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::GenerationExhausted { .. } => "GenerationExhausted",
            Error::JointLimit { .. } => "JointLimit",
            Error::EmptyMask => "EmptyMask",
            Error::NonFinite(_) => "NonFinite",
            Error::IndivisibleResolution { .. } => "IndivisibleResolution",
            Error::TooManyReferences { .. } => "TooManyReferences",
            Error::UnsupportedMode(_) => "UnsupportedMode",
            Error::DataExhausted(_) => "DataExhausted",
            Error::Io { .. } => "IoFailure",
            Error::FormatViolation(_) => "FormatViolation",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::TooSmall { .. } => "TooSmall",
            Error::TooFewFrames { .. } => "TooFewFrames",
            Error::BadImage(_) => "BadImage",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
