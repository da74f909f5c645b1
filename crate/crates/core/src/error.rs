use std::io;

use thiserror::Error;

/// Which of the three attention inputs a located error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TensorRole {
    Q,
    K,
    V,
}

impl std::fmt::Display for TensorRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TensorRole::Q => "Q",
            TensorRole::K => "K",
            TensorRole::V => "V",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PisaError {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("bad magic {found:?}, expected \"PQKV\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported PQKV version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0} (1 = f32, 2 = f64)")]
    UnsupportedDtype(u32),

    #[error("malformed file: expected {expected} bytes, found {actual}")]
    MalformedFile { expected: u64, actual: u64 },

    #[error("non-finite value in {tensor} at head {head}, row {row}, col {col}")]
    NonFiniteValue {
        tensor: TensorRole,
        head: usize,
        row: usize,
        col: usize,
    },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("degenerate scale {0}: standard deviation must be > 0")]
    DegenerateScale(f64),

    #[error("zero-norm row in {tensor} at head {head}, row {row}")]
    ZeroRow {
        tensor: TensorRole,
        head: usize,
        row: usize,
    },

    #[error("seq_len {seq_len} is not divisible by block size {block_size}")]
    BlockDivisibility { seq_len: usize, block_size: usize },

    #[error("empty selection for query block {query_block}")]
    EmptySelection { query_block: usize },

    #[error("invalid sparsity: {0}")]
    InvalidSparsity(String),

    #[error("invalid epsilon {0}: must be > 0")]
    InvalidEpsilon(f64),

    #[error("numerical overflow at row {row}")]
    NumericalOverflow { row: usize },

    #[error("inconsistent selection plan: {0}")]
    InvalidPlan(String),
}

impl PisaError {
    /// Stable short name, used for CSV status cells and FFI messages.
    pub fn name(&self) -> &'static str {
        match self {
            PisaError::Io { .. } => "Io",
            PisaError::BadMagic { .. } => "BadMagic",
            PisaError::UnsupportedVersion(_) => "UnsupportedVersion",
            PisaError::UnsupportedDtype(_) => "UnsupportedDtype",
            PisaError::MalformedFile { .. } => "MalformedFile",
            PisaError::NonFiniteValue { .. } => "NonFiniteValue",
            PisaError::InvalidDimension(_) => "InvalidDimension",
            PisaError::DegenerateScale(_) => "DegenerateScale",
            PisaError::ZeroRow { .. } => "ZeroRow",
            PisaError::BlockDivisibility { .. } => "BlockDivisibility",
            PisaError::EmptySelection { .. } => "EmptySelection",
            PisaError::InvalidSparsity(_) => "InvalidSparsity",
            PisaError::InvalidEpsilon(_) => "InvalidEpsilon",
            PisaError::NumericalOverflow { .. } => "NumericalOverflow",
            PisaError::InvalidPlan(_) => "InvalidPlan",
        }
    }

    /// True for errors caused by bad user input rather than I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, PisaError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, PisaError>;
