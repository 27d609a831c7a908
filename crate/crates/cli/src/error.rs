use std::fmt;

use zempc::ZempcError;

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(ZempcError),
    /// One or more validation checks failed.
    Validation(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        CliError::Config(msg)
    }

    /// 0 success, 1 configuration, 2 infeasibility, 3 solver failure, 4 failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                ZempcError::Config(_) | ZempcError::Parse { .. } => 1,
                ZempcError::ZoneConstruction(_) | ZempcError::Infeasible(_) => 2,
                ZempcError::Solver(_) | ZempcError::ModelEvaluation { .. } | ZempcError::Estimation(_) => 3,
            },
            CliError::Validation(_) => 4,
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Core(ZempcError::ZoneConstruction(_)) => {
                Some("the invariance kernel is empty; raise zone.delta or refine zone.resolution")
            }
            _ => None,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<ZempcError> for CliError {
    fn from(e: ZempcError) -> Self {
        CliError::Core(e)
    }
}
