//! Errors reported as one JSON object on stderr.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "config" | "usage" => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

macro_rules! from_error {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e.to_string())
            }
        }
    };
}

from_error!(bcrl_core::study::StudyError, "study");
from_error!(bcrl_core::dynamics::DynamicsError, "dynamics");
from_error!(bcrl_core::solver::SolverError, "solver");
from_error!(bcrl_core::simulator::SimulatorError, "simulator");
from_error!(bcrl_core::metrics::MetricsError, "metrics");
from_error!(bcrl_core::store::StoreError, "store");
from_error!(bcrl_core::generation::TemplateError, "template");
from_error!(bcrl_core::generation::CampaignError, "campaign");
from_error!(csv::Error, "io");
