use std::path::PathBuf;

/// Failures of the IO, harness and command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] csanet_core::Error),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset: offset as u64, msg: msg.into() }
    }

    pub fn key(key: &str, msg: impl Into<String>) -> Self {
        Error::Key { key: key.to_owned(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> u8 {
        use csanet_core::Error as C;
        match self {
            Error::Usage(_) | Error::Key { .. } | Error::Core(C::Config(_)) => exit::USAGE,
            Error::Core(C::Numerical(_) | C::Undefined(_)) => exit::NUMERICAL,
            _ => exit::DATA,
        }
    }
}
