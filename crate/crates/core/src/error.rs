use crate::comm::CommError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the admissible domain (coordinate out of range,
    /// point outside the mesh, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sparsity pattern error: {0}")]
    Pattern(String),
    /// Illegal transition of a distributed matrix's ghost state machine.
    #[error("state error: {0}")]
    State(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("rank {rank} failed: {source}")]
    RankFailed { rank: usize, source: Box<Error> },
    #[error("rank {rank} panicked: {message}")]
    RankPanicked { rank: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
