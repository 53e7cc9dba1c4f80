use std::path::PathBuf;

/// Errors surfaced by file IO and the command line.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Core(#[from] pim_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// 2 for invalid input or arguments, 3 for IO failures, 4 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                pim_core::Error::NonFiniteGradient { .. } => 4,
                pim_core::Error::NonFinite { what, .. } if *what != "features" => 4,
                _ => 2,
            },
        }
    }
}
