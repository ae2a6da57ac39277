use std::io;

use thiserror::Error;

/// Errors produced by the lookat library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },

    #[error("non-finite entry in {tensor} at flat index {index}")]
    NonFinite { tensor: &'static str, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient calibration data: {available} vectors for {required} centroids")]
    InsufficientCalibration { available: usize, required: usize },

    #[error(
        "subspace mismatch: {num_subspaces} subspaces do not divide head dimension {head_dim}"
    )]
    SubspaceMismatch {
        head_dim: usize,
        num_subspaces: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("corrupt code {code} at flat index {index} (codebook has {num_centroids} centroids)")]
    CorruptCode {
        code: u8,
        index: usize,
        num_centroids: usize,
    },

    #[error("head index {head} out of range for {head_count} heads")]
    HeadOutOfRange { head: usize, head_count: usize },

    #[error("sequence length {requested} exceeds source length {available}")]
    LengthOutOfRange { requested: usize, available: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
