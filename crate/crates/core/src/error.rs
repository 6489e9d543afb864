use thiserror::Error;

/// Errors raised across data generation, encoding, the model and evaluation.
#[derive(Debug, Error)]
pub enum IconError {
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical conditioning: {0}")]
    Conditioning(String),
    #[error("degenerate density: integral {0} is not positive")]
    DegenerateDensity(f64),
    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("capacity exceeded: {got} demos, capacity {cap}")]
    Capacity { got: usize, cap: usize },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("generation failed for family {family}, operator {operator}, pair {pair}: {source}")]
    Generation {
        family: u8,
        operator: usize,
        pair: usize,
        #[source]
        source: Box<IconError>,
    },
    #[error("non-finite loss at step {step}; batch dumped to {dump}")]
    NonFiniteLoss { step: usize, dump: String },
    #[error("oracle did not converge: {0}")]
    OracleFailure(String),
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IconError>;
