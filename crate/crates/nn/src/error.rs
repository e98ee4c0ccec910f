use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("diffusion mode requires a timestep per example")]
    MissingTimestep,
    #[error("autoregressive mode takes no timestep")]
    UnexpectedTimestep,
    #[error("non-finite input coordinates")]
    NonFiniteInput,
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("distribution row {row} sums to {sum}")]
    UnnormalizedInput { row: usize, sum: f64 },
    #[error("loss became non-finite in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint incompatible: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] symdiff_core::dataset::DatasetError),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl NnError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        NnError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, NnError>;
