use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("value {value:?} is not a level of attribute {attribute:?}")]
    UnknownValue { attribute: String, value: String },

    #[error("value {value} of attribute {attribute:?} lies outside [{lo}, {hi}]")]
    OutOfRange {
        attribute: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("column {0:?} missing from CSV header")]
    MissingColumn(String),

    #[error("bad clique: {0}")]
    BadClique(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("marginal is not normalized (sum = {0})")]
    NotNormalized(f64),

    #[error("expected a 2-way marginal, got {0}-way")]
    Not2Way(usize),

    #[error("database has no rows or no attributes")]
    EmptyDatabase,

    #[error("privacy budget must be positive, got {0}")]
    NonPositiveBudget(f64),

    #[error("noise scale must be non-negative, got {0}")]
    NegativeSigma(f64),

    #[error("bad Renyi order alpha = {0}")]
    BadAlpha(f64),

    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),

    #[error("no measurement for clique {0}")]
    MissingMeasurement(String),

    #[error("edge calibration for {edge} did not converge: total variation {residual:e} after {sweeps} sweeps")]
    CalibrationDivergence {
        edge: String,
        residual: f64,
        sweeps: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("bad predicate: {0}")]
    BadPredicate(String),

    #[error("target predicate yields a single class")]
    DegenerateTarget,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("measure {0} is undefined in every synthetic replicate")]
    AllReplicatesUndefined(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
