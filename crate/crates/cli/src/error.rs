use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Where in a scenario file a problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}")?,
            (Some(l), None) => write!(f, "line {l}")?,
            _ => write!(f, "unknown line")?,
        }
        if let Some(field) = &self.field {
            write!(f, ", field `{field}`")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {location}: {message}")]
    Schema {
        path: PathBuf,
        location: Location,
        message: String,
    },

    #[error("{path}: {location}: unknown built-in `{name}`")]
    UnknownBuiltin {
        path: PathBuf,
        location: Location,
        name: String,
    },

    #[error("no bundled scenario named `{0}`")]
    UnknownScenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] contraq_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for input and IO problems, 2 for solver errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
