use crate::config::ConfigError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fracsteer_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fracsteer_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io(_) => exit::USAGE,
            CliError::Config(_) | CliError::Core(E::Domain(_)) => exit::VALIDATION,
            CliError::Core(E::Numeric(_) | E::Convergence { .. }) => exit::NUMERIC,
        }
    }
}
