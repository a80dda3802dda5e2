use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] multishap_core::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scorer did not answer within {0} ms")]
    Timeout(u64),
    #[error("{0}")]
    Usage(String),
    #[error("invalid file {path}: {reason}")]
    InvalidFile { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(String),
}

impl Error {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    pub fn usage(msg: impl Into<String>) -> Error {
        Error::Usage(msg.into())
    }

    /// Process exit code: 2 scorer or protocol failure, 3 coverage failure,
    /// 4 usage or input error.
    pub fn exit_code(&self) -> i32 {
        use multishap_core::Error as Core;
        match self {
            Error::Core(Core::MissingCells { .. }) => 3,
            Error::Core(Core::Scorer { .. } | Core::NonFinite { .. } | Core::ZeroNorm) => 2,
            Error::Protocol(_) | Error::Transport(_) | Error::Timeout(_) => 2,
            _ => 4,
        }
    }
}
