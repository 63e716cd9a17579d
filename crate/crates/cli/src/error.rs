use proca_lattice::Error as CoreError;

/// Driver failures, each mapped to a process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The config text does not parse or has unknown keys.
    #[error("config: {0}")]
    Config(String),

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid { field: field.into(), reason: reason.into() }
    }

    /// Sorts a library error into validation or numeric failure; `context`
    /// names the config table when the library cannot.
    pub fn from_core(context: &str, e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { field, reason } => CliError::invalid(field, reason),
            CoreError::Shape(_)
            | CoreError::Topology(_)
            | CoreError::TooLarge { .. }
            | CoreError::SupportNotCovered(_) => CliError::invalid(context, e.to_string()),
            _ => CliError::Numeric(format!("{context}: {e}")),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
