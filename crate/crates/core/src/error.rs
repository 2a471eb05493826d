use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension d = {0} is too small (need d >= 3)")]
    DimensionTooSmall(usize),
    #[error("harmonic dimension N_{k} for d = {d} does not fit in 128 bits")]
    HarmonicDimOverflow { k: usize, d: usize },
    #[error("{what} = {value} is outside its domain")]
    OutOfDomain { what: &'static str, value: f64 },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("model mismatch: expected {expected}, found {found}")]
    ModelMismatch { expected: String, found: String },
    #[error("relu spectrum has no truncation order recorded")]
    MissingTruncation,
    #[error("group {index} does not exist (spectrum has {groups} groups)")]
    UnknownGroup { index: usize, groups: usize },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("feature Gram matrix is numerically zero")]
    ZeroGram,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("eigenvalue at the target boundary is zero")]
    ZeroEigenvalue,
    #[error("performance gap recovered is undefined for zero teacher loss")]
    UndefinedPgr,
    #[error("boundary S = {s} lies below the target support K = {k}")]
    BelowTargetSupport { s: usize, k: usize },
    #[error("projected Gram A_S is numerically zero")]
    ZeroProjection,
    #[error("no positive root: m = {m} is not below the nonzero eigen-count {count}")]
    NoPositiveRoot { m: f64, count: f64 },
    #[error("power-law fit needs positive values and at least two distinct abscissae: {0}")]
    BadFit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
