use std::fmt;

/// Exit codes: 1 for runtime failures, 2 for usage and configuration errors.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config(m: impl fmt::Display) -> CliError {
    CliError::Config(m.to_string())
}

pub fn runtime(m: impl fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

/// Fails with a configuration error naming `path` when it does not exist.
pub fn require_file(path: &std::path::Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config(format!("input file not found: {}", path.display())))
    }
}
