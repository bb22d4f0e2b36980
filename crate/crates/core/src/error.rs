use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spectral parameter outside the bulk: {0}")]
    OutsideBulk(String),
    #[error("near-singular operator: {0}")]
    NearSingular(String),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("integrator unstable: {0}")]
    Unstable(String),
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
