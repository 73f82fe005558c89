use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: usize,
        expected: String,
        got: String,
    },
    #[error("non-finite value encountered at layer {layer} during {context}")]
    NonFinite { layer: usize, context: String },
    #[error("invalid density {0}: must lie in (0, 1]")]
    InvalidDensity(f64),
    #[error("empty dataset or shard")]
    EmptyDataset,
    #[error("empty mask list")]
    EmptyMaskList,
    #[error("protocol violation: received model has nonzero weight outside its mask (layer {layer}, index {index})")]
    ProtocolViolation { layer: usize, index: usize },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("delta' undefined: T*eps_tilde equals or falls below eps', composition factor has a pole")]
    CompositionPole,
    #[error("not enough inactive coordinates to regrow at layer {layer}: need {need}, have {have}")]
    RegrowExhausted {
        layer: usize,
        need: usize,
        have: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
