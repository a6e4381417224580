use std::path::PathBuf;

use qgemm_lab::gptq_format::FormatError;
use qgemm_lab::kernels::KernelError;
use qgemm_lab::perf_model::ShapeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Kernel(KernelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Report(String),
    /// The run completed but some checks failed.
    #[error("{0}")]
    Check(String),
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Shape(s) => CliError::Shape(s),
            KernelError::Format(FormatError::Shape(s)) => CliError::Shape(s),
            KernelError::Format(f) => CliError::Format(f),
            other => CliError::Kernel(other),
        }
    }
}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        CliError::Shape(e.0)
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Shape(_) => "shape",
            CliError::Format(FormatError::Shape(_)) => "shape",
            CliError::Format(_) => "format",
            CliError::Kernel(_) => "kernel",
            CliError::Io { .. } => "io",
            CliError::Report(_) => "report",
            CliError::Check(_) => "check",
        }
    }

    /// 1 for failed checks, 2 for everything that stopped the command.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            _ => 2,
        }
    }

    /// Single-line `error kind=<kind> message=<json string>` record for stderr.
    pub fn machine_line(&self) -> String {
        format!(
            "error kind={} message={}",
            self.kind(),
            serde_json::Value::String(self.to_string())
        )
    }
}
