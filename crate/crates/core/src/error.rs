//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Projection of a point with non-positive camera-frame depth.
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Rotation matching against an all-zero volume; the score
    /// distribution is undefined.
    #[error("degenerate match: {0}")]
    DegenerateMatch(&'static str),

    /// Box with non-positive dimensions.
    #[error("invalid box: {0}")]
    InvalidBox(String),

    /// Scene generation could not place an object.
    #[error("object placement failed after {tries} attempts")]
    Placement { tries: usize },

    /// Malformed binary file; `offset` is the byte position of the
    /// first inconsistency.
    #[error("malformed {format} at byte offset {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
