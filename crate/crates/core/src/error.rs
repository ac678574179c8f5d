use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid arguments or configuration.
    Usage,
    /// Missing, malformed or inconsistent input data.
    Data,
    /// A solver produced non-finite values or failed to make progress.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {what} {found} (expected {expected})")]
    Unsupported {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("requested {requested} components but the data only has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("artifact fingerprint {found} does not match configuration fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("image decode: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Sample { source, .. }
            | Error::Stage { source, .. }
            | Error::Path { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_follows_wrapped_source() {
        let err = Error::Numerical("diverged".into())
            .at_sample(3)
            .in_stage("dictionary");
        assert_eq!(err.kind(), ErrorKind::Numerical);
        assert_eq!(Error::SingleClass.kind(), ErrorKind::Data);
        assert_eq!(Error::Config("x".into()).kind(), ErrorKind::Usage);
        assert!(err.to_string().contains("sample 3"));
    }
}
