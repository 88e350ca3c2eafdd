use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Core(#[from] vbse_core::Error),

    #[error("integration stopped early: {0}")]
    Truncated(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Machine-readable failure report, printed to stderr and saved as `error.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_path: Option<String>,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), message: message.into() }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn key_path(&self) -> Option<&str> {
        match self {
            CliError::Config { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        use vbse_core::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::Truncated(_) => "truncated_trajectory",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::NoRoot { .. } | E::EncoderNotConverged { .. } | E::MacroAborted { .. } => "convergence",
                E::Stiffness(_) | E::StepUnderflow { .. } | E::EncoderDrift(_) => "convergence",
                E::Resource { .. } => "resource",
                E::InvalidParameter(_) | E::Truncation(_) | E::Capacity { .. } => "invalid_parameter",
                _ => "internal",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            // an aborted macro-iteration is a convergence failure unless a resource cap stopped it
            CliError::Core(vbse_core::Error::MacroAborted { source, .. }) => match **source {
                vbse_core::Error::Resource { .. } => EXIT_RESOURCE,
                _ => EXIT_CONVERGENCE,
            },
            _ => match self.kind() {
                "config" | "invalid_parameter" => EXIT_CONFIG,
                "convergence" | "truncated_trajectory" => EXIT_CONVERGENCE,
                "resource" => EXIT_RESOURCE,
                _ => EXIT_OTHER,
            },
        }
    }

    pub fn report(&self, config_hash: Option<&str>) -> ErrorReport {
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            key_path: self.key_path().map(str::to_owned),
            exit_code: self.exit_code(),
            config_hash: config_hash.map(str::to_owned),
        }
    }
}
