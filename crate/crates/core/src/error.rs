use std::path::PathBuf;

/// Errors raised anywhere in the laboratory.
///
/// Variants are grouped by how a caller is expected to react: usage and
/// capacity errors are caller mistakes, integrity errors mean on-disk state
/// cannot be trusted.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    Numeric(&'static str),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("contamination: {0}")]
    Contamination(String),

    #[error("token id {token} outside vocabulary of size {vocab}")]
    Vocabulary { token: usize, vocab: usize },

    #[error("timestep {t} outside schedule of length {steps}")]
    Schedule { t: usize, steps: usize },

    #[error("mask coverage mismatch: {0}")]
    Coverage(String),

    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("computation is not deterministic: {0}")]
    Determinism(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn integrity(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable category name used by the CLI's JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Usage(_) => "usage",
            Error::Capacity(_) => "capacity",
            Error::Contamination(_) => "contamination",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Schedule { .. } => "schedule",
            Error::Coverage(_) => "coverage",
            Error::Integrity { .. } => "integrity",
            Error::Lookup(_) => "lookup",
            Error::Manifest(_) => "manifest",
            Error::Determinism(_) => "determinism",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
