use mcglm::McglmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] McglmError),
    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) | CliError::Io { .. } => "data",
            CliError::NotConverged { .. } => "convergence",
            CliError::Model(e) => match e {
                McglmError::Shape(_)
                | McglmError::Index(_)
                | McglmError::IncompatiblePredictors(_)
                | McglmError::Term(_)
                | McglmError::Selection(_)
                | McglmError::InvalidArgument(_) => "config",
                McglmError::Domain { .. } => "data",
                _ => "numerical",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "data" => 3,
            "numerical" => 4,
            _ => 5,
        }
    }
}

pub fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
