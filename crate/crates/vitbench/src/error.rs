use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] vitbench_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: unsupported image format: {message}")]
    Format { path: PathBuf, message: String },
    /// Config or input document violating its schema; `field` is a JSON path.
    #[error("{path}: invalid value at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("run {run}: {source}")]
    Run { run: String, source: Box<Error> },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"VITW\"")]
    BadMagic([u8; 4]),
    #[error("format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("model config mismatch: file has {found}, expected {expected}")]
    ConfigMismatch { found: String, expected: String },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for schema violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } => 2,
            Error::Core(vitbench_core::Error::Config(_)) => 2,
            Error::Run { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

/// Attach a path to I/O failures.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
