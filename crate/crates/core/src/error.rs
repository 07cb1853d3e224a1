use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum KaneError {
    #[error("value {value} lies outside the spline domain [0, 1]; scale features to the unit interval first")]
    Domain { value: f64 },

    #[error("basis index {index} out of range 1..={count}")]
    BasisIndex { index: usize, count: usize },

    #[error("invalid spline specification: {0}")]
    SplineSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}: {what}")]
    NonFinite { layer: usize, what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("only {retained} rows exceed the threshold; at least {required} are needed (lower the quantile level or supply more data)")]
    TooFewExceedances { retained: usize, required: usize },

    #[error("unsupported document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("document error: {0}")]
    Document(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KaneError>;
