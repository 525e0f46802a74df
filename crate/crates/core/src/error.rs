use std::io;

/// Crate-wide error type.
///
/// The CLI maps errors onto process exit codes via [`Error::exit_code`]:
/// 1 for validation errors, 2 for runtime/numeric errors, 3 for I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coordinate ({row}, {col}) is outside the 64x64 electrode grid")]
    OutOfGrid { row: i64, col: i64 },

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("window [{start}, {end}) out of range for recording of {duration} samples")]
    WindowOutOfRange { start: i64, end: i64, duration: u32 },

    #[error("trace too short: {len} samples, need at least {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("need at least {min} trials, got {n}")]
    NotEnoughTrials { n: usize, min: usize },

    #[error("trials are not aligned: {0}")]
    MisalignedTrials(String),

    #[error("only {found} electrodes satisfy the hotspot separation rule, requested {requested}")]
    HotspotsUnsatisfiable { requested: usize, found: usize },

    #[error("recording too short: {have} samples, need {need}")]
    InsufficientDuration { have: u32, need: u32 },

    #[error("class {label} has {found} samples, expected {expected}")]
    ClassCardinality { label: u32, expected: usize, found: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("spectral radius estimate did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for this error class (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutOfGrid { .. }
            | Error::InvalidPattern(_)
            | Error::InvalidConfig(_)
            | Error::WindowOutOfRange { .. }
            | Error::TraceTooShort { .. }
            | Error::NotEnoughTrials { .. }
            | Error::MisalignedTrials(_)
            | Error::HotspotsUnsatisfiable { .. }
            | Error::InsufficientDuration { .. }
            | Error::ClassCardinality { .. }
            | Error::EmptyTestSet
            | Error::Parse { .. }
            | Error::Format(_) => 1,
            Error::NonFinite(_) | Error::NoConvergence { .. } => 2,
            Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
