use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("class {0} has labeled pixels but no center was provided")]
    MissingCenter(u16),

    #[error("unknown class id {0}")]
    UnknownClass(u16),

    #[error("no supporting pixels for the detected center")]
    NoSupport,

    #[error("insufficient support: {found} masked depth pixels, need at least {required}")]
    InsufficientSupport { found: usize, required: usize },

    #[error("no projective associations between observed and rendered depth")]
    AssociationFailure,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
