use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantizer: {0}")]
    InvalidSpec(String),

    #[error("non-finite value {value} at {site}")]
    NonFinite { site: &'static str, value: f64 },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid requantization multiplier {0}")]
    InvalidMultiplier(f64),

    #[error("lowered graph disagrees with fake-quant forward: {0}")]
    BitExactness(String),

    #[error("accumulator overflow in layer {layer}: value {value} exceeds {bits} bits")]
    AccumulatorOverflow { layer: usize, value: i64, bits: u32 },

    #[error("activation code {code} outside [{min}, {max}] in layer {layer}")]
    ActivationRange { layer: usize, code: i64, min: i64, max: i64 },

    #[error("policy has no quantizers; an FP32 network cannot be lowered")]
    NotQuantized,

    #[error("invalid folding: {0}")]
    InvalidFolding(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
