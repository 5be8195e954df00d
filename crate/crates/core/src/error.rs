use std::io;

use thiserror::Error;

pub type Result<T, E = OmniError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// [`OmniError::code`] gives a stable machine-readable identifier that the
/// CLI emits on stderr.
#[derive(Debug, Error)]
pub enum OmniError {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate norm ({norm:e})")]
    DegenerateNorm { norm: f64 },

    #[error("non-finite function value at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("odd dimension ({0})")]
    OddDimension(usize),

    #[error("negative timestamp ({0})")]
    NegativeTimestamp(f64),

    #[error("timestamp out of range: {t} not in [0, {t_max}]")]
    TimestampOutOfRange { t: f64, t_max: f64 },

    #[error("non-finite timestamp")]
    NonFiniteTimestamp,

    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),

    #[error("invalid probability ratio ({0})")]
    InvalidRatio(f64),

    #[error("invalid probability {value} at index {index}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("support mismatch: {0} vs {1} outcomes")]
    SupportMismatch(usize, usize),

    #[error("reference probability is zero where p > 0 (index {0})")]
    ZeroReference(usize),

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("gradient check failed at step {step}: relative error {rel_error:e}")]
    GradientCheck { step: usize, rel_error: f64 },

    #[error("bad magic: expected \"OMNI\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("trailing bytes: {0} bytes after the payload")]
    TrailingBytes(usize),

    #[error("malformed sidecar: {0}")]
    Sidecar(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl OmniError {
    pub fn code(&self) -> &'static str {
        match self {
            OmniError::EmptyInput => "empty_input",
            OmniError::DegenerateNorm { .. } => "degenerate_norm",
            OmniError::NonFiniteEvaluation { .. } => "non_finite_evaluation",
            OmniError::DimensionMismatch { .. } => "dimension_mismatch",
            OmniError::OddDimension(_) => "odd_dimension",
            OmniError::NegativeTimestamp(_) => "negative_timestamp",
            OmniError::TimestampOutOfRange { .. } => "timestamp_out_of_range",
            OmniError::NonFiniteTimestamp => "non_finite_timestamp",
            OmniError::ModalityMismatch(_) => "modality_mismatch",
            OmniError::InvalidRatio(_) => "invalid_probability_ratio",
            OmniError::InvalidProbability { .. } => "invalid_probability",
            OmniError::SupportMismatch(..) => "support_mismatch",
            OmniError::ZeroReference(_) => "zero_reference",
            OmniError::InvalidConfig { .. } => "invalid_config",
            OmniError::Diverged { .. } => "diverged",
            OmniError::GradientCheck { .. } => "gradient_check",
            OmniError::BadMagic(_) => "bad_magic",
            OmniError::UnsupportedVersion(_) => "unsupported_version",
            OmniError::TruncatedPayload { .. } => "truncated_payload",
            OmniError::TrailingBytes(_) => "trailing_bytes",
            OmniError::Sidecar(_) => "malformed_sidecar",
            OmniError::Json(_) => "json",
            OmniError::Io(_) => "io",
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        OmniError::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
