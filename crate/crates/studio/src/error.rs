use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StudioError {
    #[error(transparent)]
    Core(#[from] nae_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Config(String),
    #[error("port {port} is unavailable: {source}")]
    PortBusy {
        port: u16,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, StudioError>;

impl StudioError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(msg: impl std::fmt::Display) -> Self {
        Self::Format(msg.to_string())
    }

    /// Process exit status: 1 configuration or input, 2 I/O and file
    /// formats, 3 numeric failure, 4 port in use.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(nae_core::Error::Numeric(_)) => 3,
            Self::Core(_) | Self::Config(_) => 1,
            Self::Io { .. } | Self::Format(_) => 2,
            Self::PortBusy { .. } => 4,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| StudioError::io(path, e))
    }
}
