//! Synthetic lidar-inertial scenarios for exercising the manifold filter,
//! with Monte Carlo consistency metrics and a flat quaternion baseline.

pub mod baseline;
pub mod config;
pub mod linear;
pub mod montecarlo;
pub mod output;
pub mod trajectory;
pub mod trial;

pub use config::{ConfigError, FilterKind, Normalization, Scenario, ScenarioConfig};
pub use trial::{run_on, run_trial, StepRecord, TrialRecord, TrialSummary};
