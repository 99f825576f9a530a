use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numerical error in stage `{stage}`: {detail}")]
    Numerical { stage: &'static str, detail: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("invalid model state: {0}")]
    State(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic number {found:#010x} (expected {expected:#010x})")]
    Magic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}:{row}: {detail}")]
    Csv { path: PathBuf, row: usize, detail: String },

    #[error("model file format: {0}")]
    Format(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("stream synchronization error: {0}")]
    Sync(String),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("pipeline aborted in stage `{stage}` at image {tag}: {source}")]
    Pipeline {
        stage: String,
        tag: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 I/O or format, 4 numerical,
    /// 5 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Io { .. }
            | Error::Magic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Csv { .. }
            | Error::Format(_)
            | Error::Version { .. } => 3,
            Error::Numerical { .. } => 4,
            Error::Shape { .. } | Error::State(_) | Error::Sync(_) | Error::Accounting(_) => 5,
            Error::Pipeline { source, .. } => source.exit_code(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
