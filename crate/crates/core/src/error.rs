use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("index {index} out of range (stored length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite rate in {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("negative count: {event} would drive size {size} below zero")]
    NegativeCount { event: &'static str, size: usize },

    #[error("event budget of {budget} exhausted at t = {t}")]
    Stall { budget: u64, t: f64 },

    #[error("time step {dt} exceeds the CFL bound {max_dt}")]
    CflViolation { dt: f64, max_dt: f64 },

    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("free-particle concentration left the incoming regime at t = {t}")]
    RegimeExit { t: f64 },

    #[error("moment closure requires size-independent rates")]
    NotConstantRate,

    #[error("stationary series diverges: {0}")]
    DivergentNorm(String),

    #[error("insufficient burn-in: {0}")]
    InsufficientBurnIn(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedRegime(_) => "UnsupportedRegime",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonFinite { .. } => "NonFinite",
            Error::NegativeCount { .. } => "NegativeCount",
            Error::Stall { .. } => "StallError",
            Error::CflViolation { .. } => "CFLViolation",
            Error::NegativeDensity { .. } => "NegativeDensity",
            Error::RegimeExit { .. } => "RegimeExit",
            Error::NotConstantRate => "NotConstantRate",
            Error::DivergentNorm(_) => "DivergentNorm",
            Error::InsufficientBurnIn(_) => "InsufficientBurnIn",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
