use std::fmt;
use std::path::Path;

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: unreadable or malformed input, invalid config.
    BadInput(String),
    /// Exit 3: artifacts produced under different configurations.
    Incompatible(String),
    /// Exit 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::BadInput(_) => 2,
            CliError::Incompatible(_) => 3,
        }
    }

    pub fn input(path: &Path, err: impl fmt::Display) -> Self {
        CliError::BadInput(format!("{}: {err}", path.display()))
    }

    pub fn output(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Internal(format!("writing {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::BadInput(m) => write!(f, "bad input: {m}"),
            CliError::Incompatible(m) => write!(f, "incompatible: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pyrdpm::Error> for CliError {
    fn from(e: pyrdpm::Error) -> Self {
        use pyrdpm::Error as E;
        match e {
            E::Incompatible(_) | E::PipelineOrder(_) => CliError::Incompatible(e.to_string()),
            E::InvalidInput(_)
            | E::Data(_)
            | E::NonFinite { .. }
            | E::Degenerate(_)
            | E::NoGroundTruth
            | E::Config(_)
            | E::Format(_)
            | E::Parse { .. } => CliError::BadInput(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
