use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("power-delay profile `{name}` spans {span} samples, cyclic prefix is {cp_len}")]
    ProfileExceedsCp {
        name: String,
        span: usize,
        cp_len: usize,
    },

    #[error("invalid impairment: {0}")]
    InvalidImpairment(String),

    #[error("zero known symbol at index {0}")]
    ZeroSymbol(usize),

    #[error("odd bit count {0}")]
    OddBitCount(usize),

    #[error("group index {index} out of range ({groups} groups)")]
    GroupOutOfRange { index: usize, groups: usize },

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("missing offline baseline `{0}`")]
    MissingBaseline(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
