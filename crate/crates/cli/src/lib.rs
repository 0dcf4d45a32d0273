//! Configuration, orchestration, and persistence for the `price` binary.

use thiserror::Error;

pub mod config;
pub mod outputs;
pub mod pipeline;

pub use config::{parse_config, ScenarioConfig};
pub use pipeline::{run_oracle, run_scenario, run_scenario_full, RunManifest};

/// Exit codes: 2 for configuration and validation failures, 3 for numerical
/// failures, 1 for IO.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("SCHEMA({path}): {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Model(#[from] endow_core::model::ModelError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } | CliError::Model(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<endow_core::simulate::SimulateError> for CliError {
    fn from(e: endow_core::simulate::SimulateError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<endow_core::filter::FilterError> for CliError {
    fn from(e: endow_core::filter::FilterError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<endow_core::longevity::LongevityError> for CliError {
    fn from(e: endow_core::longevity::LongevityError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<endow_core::bsde::BsdeError> for CliError {
    fn from(e: endow_core::bsde::BsdeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<endow_core::pricing::PricingError> for CliError {
    fn from(e: endow_core::pricing::PricingError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
