use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate medium: transparency window width is zero (Γ = 0 and Ω = 0)")]
    DegenerateMedium,

    #[error("grid mismatch: expected {expected} points, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("step too large: attenuation·d_tau = {product} exceeds 0.1")]
    StepTooLarge { product: f64 },

    #[error("aliasing: band limit {band_limit} Hz exceeds Nyquist {nyquist} Hz")]
    Aliasing { band_limit: f64, nyquist: f64 },

    #[error("carrier difference {difference} Hz violates Nyquist {nyquist} Hz")]
    Nyquist { difference: f64, nyquist: f64 },

    #[error("dimension mismatch: expected {expected} components, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("too few ensemble members: {found} (need at least 2)")]
    TooFewMembers { found: usize },

    #[error("segment length {segment_len} exceeds series length {len}")]
    SegmentTooLong { segment_len: usize, len: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("series mismatch: {0}")]
    SeriesMismatch(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient points: need {needed}, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("no peak above baseline")]
    NoPeak,

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse { line: usize, column: usize, message: String },

    #[error("config validation error at `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// Process exit code for the CLI: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::ConfigValidation { .. } | Error::InvalidParameter { .. } => 1,
            Error::Io(_) | Error::Format(_) => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
