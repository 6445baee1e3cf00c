//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-positive gain {value} at frame {frame}")]
    NonPositiveGain { frame: usize, value: f64 },

    #[error("batch kind {found} not accepted here (expected {expected})")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("frame {frame} is all-zero")]
    AllZeroFrame { frame: usize },

    #[error("power-delay profile is empty")]
    EmptyPdp,

    #[error("frequency band [{lo}, {hi}] Hz is empty or exceeds Nyquist {nyquist} Hz")]
    BadBand { lo: f64, hi: f64, nyquist: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{method} failed at frame {frame}: {reason}")]
    Estimation {
        method: &'static str,
        frame: usize,
        reason: String,
    },

    #[error("singular weighted least-squares system at frame {frame}")]
    SingularSystem { frame: usize },

    #[error("gamma = 1 leaves no dynamic component to evaluate")]
    NoDynamicComponent,

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected \"CSIB\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported file version {found}")]
    UnsupportedVersion { found: u16 },

    #[error("corrupt: expected {expected} bytes, found {found}")]
    Corrupt { expected: usize, found: usize },

    #[error("CSV import: {0}")]
    Csv(String),

    #[error("ground truth is missing {0}")]
    MissingTruth(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to: 2 for data errors,
    /// 3 for numerical/estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Estimation { .. }
            | Error::SingularSystem { .. }
            | Error::AllZeroFrame { .. }
            | Error::NonPositiveGain { .. }
            | Error::ZeroDenominator(_)
            | Error::NoDynamicComponent => 3,
            _ => 2,
        }
    }
}
