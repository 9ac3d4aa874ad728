//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // compositional algebra
    #[error("column {column} sums to zero; closure is undefined")]
    AllZeroColumn { column: usize },
    #[error("negative entry {value} at part {part}, column {column}")]
    NegativeEntry { part: usize, column: usize, value: f64 },
    #[error("non-positive entry {value} at part {part}, column {column}")]
    NonPositiveEntry { part: usize, column: usize, value: f64 },
    #[error("column {column} sums to {sum}, expected {expected}")]
    ColumnSum { column: usize, sum: f64, expected: f64 },
    #[error("clr coordinate {value} exceeds the exponent range guard")]
    Overflow { value: f64 },
    #[error("time grids differ")]
    GridMismatch,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // smoothing / completion
    #[error("invalid smoothing configuration: {0}")]
    InvalidSmoothing(String),
    #[error("penalized spline system is singular (rank-deficient basis on the observed points)")]
    SingularFit,
    #[error("only {found} complete curves available, at least {needed} are required")]
    InsufficientCompleteCurves { needed: usize, found: usize },
    #[error("curve `{id}` observes only {observed:.1}% of the grid (minimum 60%)")]
    GuardViolation { id: String, observed: f64 },

    // fpca
    #[error("empty sample")]
    EmptySample,
    #[error("sample of size {found} is too small, at least {needed} curves are required")]
    InsufficientSample { needed: usize, found: usize },
    #[error("covariance kernel is not positive semi-definite (eigenvalue {eigenvalue})")]
    NonPsd { eigenvalue: f64 },
    #[error("symmetric eigen-solver did not converge")]
    ConvergenceFailure,

    // clustering
    #[error("invalid clustering parameter: {0}")]
    InvalidClustering(String),
    #[error("spectral embedding row {row} has near-zero norm")]
    DegenerateEmbedding { row: usize },
    #[error("k-means produced an empty cluster after {attempts} initializations")]
    EmptyCluster { attempts: usize },
    #[error("silhouette is undefined for a single cluster")]
    SingleCluster,

    // ingest
    #[error("input header is missing column `{0}`")]
    HeaderMismatch(String),
    #[error("unknown ICD revision `{0}`")]
    UnknownRevision(String),
    #[error("invalid cause map entry: {0}")]
    InvalidCauseMap(String),
    #[error("code `{code}` (ICD-{revision}) matches classes {first} and {second} with equal priority")]
    AmbiguousCode { code: String, revision: u8, first: String, second: String },
    #[error("curve `{id}` is missing {missing} of {total} years, beyond the completion guard")]
    MissingYearBeyondGuard { id: String, missing: usize, total: usize },

    // files and configuration
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing upstream artifact {}", .0.display())]
    MissingUpstreamArtifact(PathBuf),
    #[error("malformed file {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | InvalidSmoothing(_) | InvalidClustering(_) | InvalidCauseMap(_) => ErrorKind::Config,
            Overflow { .. }
            | SingularFit
            | NonPsd { .. }
            | ConvergenceFailure
            | DegenerateEmbedding { .. }
            | EmptyCluster { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), message: message.into() }
    }
}
