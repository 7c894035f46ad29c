//! Failures and the exit codes they map to.

use agentcare::metrics::MetricsError;
use agentcare::scenario::ScenarioError;
use agentcare::LoadError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Provenance(_) => 4,
        }
    }

    /// Input files that fail to load are configuration problems.
    pub fn input(e: LoadError) -> Self {
        CliError::Config(e.to_string())
    }

    /// Output files that fail to write are runtime problems.
    pub fn output(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(m) => CliError::Config(m),
            ScenarioError::Metrics(m @ MetricsError::ProvenanceMismatch { .. }) => CliError::Provenance(m.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::ProvenanceMismatch { .. } => CliError::Provenance(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
