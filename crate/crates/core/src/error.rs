use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },

    #[error("singular system: rank {rank} < {dim}")]
    Singular { rank: usize, dim: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    #[error("spectrum is not admissible for perfect transfer: {0}")]
    Inadmissible(String),

    #[error("ill-posed inverse problem: {0}")]
    IllPosed(String),

    #[error("two-excitation table is not antisymmetric (deviation {0:e})")]
    NotAntisymmetric(f64),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
