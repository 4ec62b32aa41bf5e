use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid lattice: {0}")]
    Grid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not paraunitary (defect {0:e})")]
    NotParaunitary(f64),
    #[error("waveform is not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
