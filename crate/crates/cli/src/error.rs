use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error in module `{module}`: {message}")]
    Numerical { module: &'static str, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// Classify a library error raised while running an experiment in `module`.
    pub fn from_lib(module: &'static str, e: dklab::DkError) -> Self {
        match e {
            dklab::DkError::InvalidParameter(m) => CliError::Config(format!("{module}: {m}")),
            dklab::DkError::Numerical(m) => CliError::Numerical { module, message: m },
            dklab::DkError::Io(e) => CliError::Io(e.to_string()),
            dklab::DkError::Json(e) => CliError::Io(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } | CliError::Io(_) => 3,
            CliError::Check(_) => 4,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
