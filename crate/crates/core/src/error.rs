use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error(
        "broadcast error: cannot broadcast {rhs:?} onto {lhs:?} (rhs must be a suffix of lhs)"
    )]
    Broadcast { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("graph state error: {0}")]
    State(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("image {path} is not 8-bit RGB ({found})")]
    Channel { path: PathBuf, found: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
