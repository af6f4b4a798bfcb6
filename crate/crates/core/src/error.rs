use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum SnicaError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    /// A chain message lost positive definiteness, usually because the
    /// surrogate potentials and dynamics disagree badly.
    #[error("improper message in {0}")]
    ImproperMessage(&'static str),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset has no ground truth")]
    MissingGroundTruth,
}

pub type Result<T, E = SnicaError> = std::result::Result<T, E>;
