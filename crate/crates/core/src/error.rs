use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("forward cache is stale: it was produced by a different parameter state")]
    StaleCache,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no negative gradient entries, impact cannot be estimated from shared gradients")]
    NoNegativeGradients,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset has no samples of class {0}")]
    MissingClass(usize),

    #[error("label multiset totals differ: {left} vs {right}")]
    TotalMismatch { left: usize, right: usize },

    #[error("zero variance input")]
    ZeroVariance,

    #[error("wrong IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
