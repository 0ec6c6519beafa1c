use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("sample size too small: n = {n}, need at least {min}")]
    SampleTooSmall { n: usize, min: usize },

    #[error("no empirical envelope for n = {0} (available for 4..=9)")]
    NoEnvelope(usize),

    #[error("skewness out of range: |S| = {s} exceeds {max}")]
    SkewOutOfRange { s: f64, max: f64 },

    #[error("degenerate block")]
    DegenerateBlock,

    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown distribution `{0}`")]
    UnknownDistribution(String),

    #[error("empty series after filtering")]
    EmptySeries,

    #[error("series shorter than one block: {len} values, block size {n}")]
    SeriesTooShort { len: usize, n: usize },

    #[error("line {line}: cannot parse {value:?} as a number")]
    Parse { line: u64, value: String },

    #[error("line {line}: column {column} not present")]
    MissingColumn { line: u64, column: String },

    #[error("insufficient tail rows: need {required}, have {available}")]
    InsufficientTailRows { required: usize, available: usize },

    #[error("table too small for detection: no quantile level has {min_rows} conditioning rows")]
    TableTooSmall { min_rows: usize },

    #[error("empty table")]
    EmptyTable,

    #[error("segment underdetermined: [{s_lo}, {s_hi}] has {bins} occupied bins, need 3")]
    SegmentUnderdetermined { s_lo: f64, s_hi: f64, bins: usize },

    #[error("degenerate bounding box: all points identical")]
    DegenerateBoundingBox,

    #[error("insufficient scales for dimension fit: {available} usable, need 3")]
    InsufficientScales { available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated in block {block}: {what}")]
    Invariant { block: u64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification of errors, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller supplied an invalid argument or parameter.
    Usage,
    /// Input data was malformed or unusable.
    Data,
    /// A mathematical precondition failed (degenerate block, out of range).
    Domain,
    /// Not enough rows/points/scales for a statistical procedure.
    Insufficient,
    /// Internal invariant broken.
    Internal,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            SampleTooSmall { .. }
            | NoEnvelope(_)
            | InvalidParameter(_)
            | UnknownDistribution(_)
            | InvalidArgument(_) => ErrorCategory::Usage,
            EmptySample
            | NonFinite(_)
            | EmptySeries
            | SeriesTooShort { .. }
            | Parse { .. }
            | MissingColumn { .. }
            | Csv(_)
            | Json(_) => ErrorCategory::Data,
            SkewOutOfRange { .. } | DegenerateBlock | DegenerateBoundingBox => ErrorCategory::Domain,
            InsufficientTailRows { .. }
            | TableTooSmall { .. }
            | EmptyTable
            | SegmentUnderdetermined { .. }
            | InsufficientScales { .. } => ErrorCategory::Insufficient,
            Invariant { .. } => ErrorCategory::Internal,
            Io(_) => ErrorCategory::Io,
        }
    }
}
