use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite feature at pixel {pixel}")]
    NonFinite { pixel: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("probability simplex violated at pixel {pixel}: {reason}")]
    Simplex { pixel: usize, reason: String },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("threshold calibration received no probability maps")]
    EmptyStream,
    #[error("non-finite gradient in {tensor}[{index}]")]
    NonFiniteGradient { tensor: &'static str, index: usize },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures of a teacher query. Each has its own variant so callers can tell
/// a slow teacher from a broken one.
#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("teacher did not answer within {0} ms")]
    Timeout(u64),
    #[error("malformed teacher response: {0}")]
    Malformed(String),
    #[error("teacher response violates the probability simplex at pixel {pixel}")]
    SimplexViolation { pixel: usize },
    #[error("teacher returned error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("teacher rejected input: {0}")]
    Input(String),
    #[error("teacher transport: {0}")]
    Io(#[from] io::Error),
}
