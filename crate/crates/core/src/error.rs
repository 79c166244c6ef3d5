use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("buffer length mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("failed to decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("failed to encode {path}: {message}")]
    Encode { path: String, message: String },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all points coincide")]
    CoincidentPoints,
    #[error("circle fit is degenerate (points are collinear)")]
    DegenerateCircle,
    #[error("distortion parameters do not give an injective undistortion map")]
    NonInjective,
    #[error("need at least {needed} segments, got {got}")]
    InsufficientSegments { needed: usize, got: usize },
    #[error("calibration unavailable: no hypothesis reached {needed} inliers")]
    CalibrationUnavailable { needed: usize },
    #[error("image id mismatch: {detected} vs {truth}")]
    ImageIdMismatch { detected: String, truth: String },
    #[error("segment file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
