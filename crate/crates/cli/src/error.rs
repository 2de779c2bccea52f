use std::process::ExitCode;

use tsa_core::TsaError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] TsaError),
    #[error("verification failed: {0}")]
    Mismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                TsaError::InvalidArgument(_) => 2,
                TsaError::Capacity { .. } => 3,
                TsaError::Numerical { .. } | TsaError::DegenerateNorm { .. } => 4,
                TsaError::Io(_) | TsaError::Csv(_) | TsaError::Json(_) => 1,
            },
            CliError::Mismatch(_) => 5,
            CliError::Io { .. } => 1,
        };
        ExitCode::from(code)
    }
}
