use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const PIPELINE: i32 = 5;
    pub const REFUSED: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: manifest version {found} is not supported by this build (expects {expected}); rerun the pipeline with --force to upgrade the run directory", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("{}: digest mismatch, artifact was modified after it was recorded", path.display())]
    Digest { path: PathBuf },

    #[error("stage `{stage}` failed: {source}")]
    Pipeline {
        stage: String,
        #[source]
        source: d3m_core::Error,
    },

    #[error("refusing to write into {}: {reason}", path.display())]
    Refused { path: PathBuf, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } | CliError::Format { .. } | CliError::Version { .. } | CliError::Digest { .. } => {
                exit::PARSE
            }
            CliError::Pipeline { source, .. } => match source.root() {
                d3m_core::Error::CostGuard { .. } => exit::REFUSED,
                _ => exit::PIPELINE,
            },
            CliError::Refused { .. } => exit::REFUSED,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn stage(stage: &str, source: d3m_core::Error) -> Self {
        CliError::Pipeline {
            stage: stage.to_string(),
            source,
        }
    }
}

/// Attaches a file path to IO results.
pub trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}
