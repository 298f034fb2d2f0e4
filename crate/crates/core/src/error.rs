use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or layouts that do not chain, or buffers of the wrong length.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    /// Caller-supplied data that violates an operation contract.
    #[error("input error: {0}")]
    Input(String),

    /// Operation called in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Checkpoint container problems (magic, version, hash, truncation).
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("pruning emptied layer `{layer}`: no free capacity left")]
    Saturation { layer: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Short stable name, used for persisted failure records and CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Structure(_) => "structure",
            Error::Numeric { .. } => "numeric",
            Error::Input(_) => "input",
            Error::State(_) => "state",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::Saturation { .. } => "saturation",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Parse { .. } | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numeric { .. } | Error::Saturation { .. } => 4,
            Error::Structure(_) | Error::State(_) => 5,
        }
    }
}
