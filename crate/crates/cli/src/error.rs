use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{source_name} line {line}: {reason}")]
    ConfigSyntax {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("config key `{key}`: {reason}")]
    ConfigValue { key: String, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),

    #[error("training diverged at iteration {iteration}; snapshot written to {}", path.display())]
    Diverged { iteration: usize, path: PathBuf },

    #[error(transparent)]
    Core(#[from] qamatch::Error),
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const DIVERGENCE: u8 = 4;

    pub fn value(key: &str, reason: impl Into<String>) -> Self {
        CliError::ConfigValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use qamatch::Error as E;
        match self {
            CliError::ConfigSyntax { .. }
            | CliError::ConfigValue { .. }
            | CliError::Usage(_)
            | CliError::Exists(_) => Self::USAGE,
            CliError::Diverged { .. } => Self::DIVERGENCE,
            CliError::Core(E::Parameter { .. }) => Self::USAGE,
            CliError::Core(E::TrainingDivergence(_) | E::GradientDivergence { .. }) => {
                Self::DIVERGENCE
            }
            CliError::Core(_) => Self::DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
