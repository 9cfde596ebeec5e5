use thiserror::Error;

use crate::egomotion::EgomotionEstimate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("translation is too small to define an essential matrix")]
    DegenerateTranslation,
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("estimation failed: best model has inlier ratio {inlier_ratio:.3}")]
    EstimationFailure {
        inlier_ratio: f64,
        best: Box<EgomotionEstimate>,
    },
    #[error("cheirality check failed: best candidate has {votes} of {total} points in front")]
    CheiralityFailure { votes: usize, total: usize },
    #[error("rays are parallel, triangulation has zero parallax")]
    ZeroParallax,
    #[error("egomotion is degenerate (no translation); use the homography cost")]
    DegenerateEgomotion,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("rigid fit failed: {0}")]
    FitFailure(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
