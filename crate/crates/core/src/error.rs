//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SilaError>;

#[derive(Debug, Error)]
pub enum SilaError {
    /// Two operands do not conform for the named primitive.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A forward or backward pass produced (or was handed) NaN/Inf.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A spec or configuration failed validation.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("group index {group} out of range for {groups} groups")]
    InvalidGroup { group: usize, groups: usize },

    #[error("expected {expected} loss weights, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward root must be a scalar, got {numel} elements")]
    BackwardRoot { numel: usize },

    /// A parameter set built for one architecture was used as another.
    #[error("parameter set is not a {expected} network")]
    ArchMismatch { expected: &'static str },

    #[error("budget {budget} is below the cheapest exit cost {min_cost}")]
    BudgetTooSmall { budget: f64, min_cost: f64 },

    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic {
        file: String,
        found: u32,
        expected: u32,
    },

    #[error("{file}: payload truncated, needed {needed} bytes but found {got}")]
    IdxTruncated {
        file: String,
        needed: usize,
        got: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SilaError {
    /// Stable one-word category for machine-parseable CLI failures.
    pub fn category(&self) -> &'static str {
        match self {
            SilaError::ShapeMismatch { .. }
            | SilaError::NonFinite { .. }
            | SilaError::BackwardRoot { .. } => "numeric",
            SilaError::InvalidSpec(_)
            | SilaError::WeightCountMismatch { .. }
            | SilaError::ArchMismatch { .. } => "spec",
            SilaError::InvalidLabel { .. } | SilaError::InvalidGroup { .. } => "label",
            SilaError::BudgetTooSmall { .. } => "budget",
            SilaError::IdxBadMagic { .. }
            | SilaError::IdxTruncated { .. }
            | SilaError::IdxCountMismatch { .. }
            | SilaError::Parse { .. } => "data",
            SilaError::Config(_) => "config",
            SilaError::Io(_) => "io",
            SilaError::Json(_) => "json",
        }
    }
}
