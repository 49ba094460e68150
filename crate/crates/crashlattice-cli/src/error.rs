//! Exit-code policy: 0 success, 2 validation error, 3 numerical failure.
//! Failures also emit a machine-readable JSON object on stderr.

use crashlattice::inference::InferenceError;
use crashlattice::selection::SelectionError;
use crashlattice::sim::SimError;

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: files, configuration, schema, cross-checks.
    Validation(String),
    /// The computation itself failed.
    Numerical(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv error: {e}"))
    }
}

impl From<crashlattice::lattice::LatticeError> for CliError {
    fn from(e: crashlattice::lattice::LatticeError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<crashlattice::model::ModelError> for CliError {
    fn from(e: crashlattice::model::ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<crashlattice::gmrf::GmrfError> for CliError {
    fn from(e: crashlattice::gmrf::GmrfError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::InvalidConfig { .. } | InferenceError::Model(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidScenario { .. } | SimError::Lattice(_) | SimError::Model(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}
