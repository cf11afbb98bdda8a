use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    OutOfRange { line: usize, message: String },

    #[error("incomplete triads, missing (site, role, subject) cells: {}", .0.join(", "))]
    IncompleteTriads(Vec<String>),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] transmix::Error),
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Parse { .. } => "parse",
            Self::OutOfRange { .. } => "out_of_range",
            Self::IncompleteTriads(_) => "incomplete_triads",
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Core(_) => "model",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
