use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a generation, recognition, scoring or feature backend.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("unknown {kind} backend {name:?}")]
    UnknownBackend { kind: &'static str, name: String },
    #[error("{0}")]
    Input(String),
    #[error("missing {stage} artifact for {subject}")]
    MissingArtifact { subject: String, stage: &'static str },
    #[error("backend {backend}: {message}")]
    Backend { backend: String, message: String },
    #[error("{0}")]
    Integrity(String),
    #[error(transparent)]
    Core(#[from] stablemorph_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Stable machine-parsable error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::UnknownBackend { .. } => "config",
            Error::Input(_) | Error::Core(_) => "input",
            Error::MissingArtifact { .. } => "missing-prerequisite",
            Error::Backend { .. } => "backend",
            Error::Integrity(_) => "integrity",
            Error::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "input" => 3,
            "missing-prerequisite" => 4,
            "backend" => 5,
            "integrity" => 6,
            _ => 7,
        }
    }
}
