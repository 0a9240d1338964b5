use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Optional backend capabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    GradientSaliency,
    Attention,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capability::GradientSaliency => f.write_str("gradient_saliency"),
            Capability::Attention => f.write_str("attention"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendErrorKind {
    /// Server could not be reached.
    Connect,
    /// Server speaks a different protocol version.
    VersionMismatch,
    /// Response did not match the expected schema; carries the payload.
    Protocol,
    /// Server answered with a non-success status.
    Status(u16),
    /// Anything else reported by a backend implementation.
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            BackendErrorKind::Connect => write!(f, "connect error: {}", self.message),
            BackendErrorKind::VersionMismatch => write!(f, "version mismatch: {}", self.message),
            BackendErrorKind::Protocol => write!(f, "protocol error: {}", self.message),
            BackendErrorKind::Status(code) => write!(f, "HTTP {code}: {}", self.message),
            BackendErrorKind::Other => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    EmptyText,
    LengthMismatch { left: usize, right: usize },
    IndexOutOfRange { position: usize, len: usize },
    /// A token that does not re-tokenize to itself.
    InvalidToken(String),
    CapabilityUnavailable(Capability),
    IdenticalTexts,
    InputNotToxic { p_toxic: f64 },
    NoCounterfactualFound { expansions: usize },
    EmptyCorpus,
    /// Malformed data file or parameter.
    InvalidData { line: usize, message: String },
    InvalidConfig(String),
    Backend(BackendError),
}

impl From<BackendError> for Error {
    fn from(e: BackendError) -> Self {
        Error::Backend(e)
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyText => f.write_str("empty text"),
            Error::LengthMismatch { left, right } => {
                write!(f, "token length mismatch: {left} vs {right}")
            }
            Error::IndexOutOfRange { position, len } => {
                write!(f, "position {position} out of range for {len} tokens")
            }
            Error::InvalidToken(t) => write!(f, "invalid token {t:?}"),
            Error::CapabilityUnavailable(c) => write!(f, "backend capability unavailable: {c}"),
            Error::IdenticalTexts => f.write_str("counterfactual is identical to the input"),
            Error::InputNotToxic { p_toxic } => {
                write!(f, "input not classified toxic (p_toxic = {p_toxic:.4})")
            }
            Error::NoCounterfactualFound { expansions } => {
                write!(f, "no counterfactual found after {expansions} expansions")
            }
            Error::EmptyCorpus => f.write_str("empty corpus"),
            Error::InvalidData { line, message } => write!(f, "line {line}: {message}"),
            Error::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            Error::Backend(e) => write!(f, "backend error: {e}"),
        }
    }
}

impl core::error::Error for Error {}
