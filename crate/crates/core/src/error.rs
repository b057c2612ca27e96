use thiserror::Error;

/// Failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("non-orthonormal input: residual {0:.3e} exceeds tolerance")]
    NotOrthonormal(f64),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("protocol state error: {0}")]
    Protocol(String),
    #[error("model container error: {0}")]
    Container(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
