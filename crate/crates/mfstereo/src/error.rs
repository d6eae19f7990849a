use std::path::PathBuf;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("{context}: {reason}")]
    Format { context: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch for {what}: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        what: &'static str,
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("{what} supports at most {limit} elements, got {got}")]
    TooLarge {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    /// Mean-field update produced a non-finite value; usually a sign that
    /// the pairwise weights blew the energies out of floating-point range.
    #[error("non-finite belief at pixel {pixel} (parameter blow-up?)")]
    NonFinite { pixel: usize },

    #[error("no pixels left to evaluate (empty ground-truth/mask intersection)")]
    NothingToEvaluate,
}

impl Error {
    /// Process exit code per CLI contract: 1 for input problems,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 2,
            _ => 1,
        }
    }
}
