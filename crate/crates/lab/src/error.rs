use std::path::PathBuf;

/// Errors surfaced by the harness. [`LabError::exit_code`] maps them onto the
/// CLI's exit status.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// A config line is malformed or names an unknown key.
    #[error("{source_name}:{line}: {message}")]
    ConfigLine {
        source_name: String,
        line: usize,
        message: String,
    },

    /// A config is well formed but inconsistent.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] remer_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for everything that went wrong while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::ConfigLine { .. } | Self::Config(_) => 2,
            Self::Core(remer_core::Error::Config(_) | remer_core::Error::Layout { .. }) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
