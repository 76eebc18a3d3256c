use std::fmt;

use crate::StageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("temperature must be finite and positive, got {0}")]
    InvalidTemperature(f64),

    #[error("training diverged at stage {stage}, epoch {epoch}: non-finite loss")]
    Divergence { stage: StageId, epoch: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("bank load failed: {0}")]
    BankLoad(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

/// What went wrong while parsing an `ESNF` embedding file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic([u8; 4]),
    BadVersion(u32),
    /// The file ended partway through a header or record.
    Truncated { needed: u64, available: u64 },
    /// Header dimension is unusable or disagrees with the payload or the caller.
    InconsistentDimension { expected: Option<u32>, found: u32 },
    /// The header promises more complete records than the file holds.
    OverstatedCount { declared: u64, present: u64 },
    NonFiniteFeature,
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatErrorKind::BadMagic(m) => write!(f, "bad magic {m:02x?}, expected \"ESNF\""),
            FormatErrorKind::BadVersion(v) => write!(f, "unsupported version {v}"),
            FormatErrorKind::Truncated { needed, available } => {
                write!(f, "truncated: needed {needed} bytes, {available} available")
            }
            FormatErrorKind::InconsistentDimension { expected: Some(e), found } => {
                write!(f, "inconsistent dimension: expected {e}, found {found}")
            }
            FormatErrorKind::InconsistentDimension { expected: None, found } => {
                write!(f, "inconsistent dimension {found} for payload")
            }
            FormatErrorKind::OverstatedCount { declared, present } => {
                write!(f, "record count {declared} declared but only {present} present")
            }
            FormatErrorKind::NonFiniteFeature => write!(f, "non-finite feature value"),
        }
    }
}

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ESNF parse error at byte {offset}: {kind}")]
pub struct FormatError {
    pub offset: u64,
    pub kind: FormatErrorKind,
}
