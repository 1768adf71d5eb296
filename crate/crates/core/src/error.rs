use thiserror::Error;

#[derive(Debug, Error)]
pub enum MrngError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("points {first} and {second} are identical")]
    DuplicatePoint { first: usize, second: usize },

    #[error("angle {0} is outside [0, pi]")]
    AngleOutOfRange(f64),

    #[error("node {node} is not a local minimum: neighbor {closer} is closer to the query")]
    NotLocalMinimum { node: u32, closer: u32 },

    #[error("dataset checksum mismatch: expected {expected:#018x}, found {found:#018x}")]
    ChecksumMismatch { expected: u64, found: u64 },

    #[error("desk-scale cap exceeded: n = {n} > {cap} (pass --force to override)")]
    CapExceeded { n: usize, cap: usize },

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MrngError>;
