//! Config-driven perturbation audits over the core pipeline: load an
//! experiment file, test every declared perturbation against a shared
//! original batch, adjust for multiple testing, and emit reports.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{CalibrationConfig, ExperimentConfig, MultipleTesting, Perturbation, PerturbationKind};
pub use experiment::{apply_perturbation, run_experiment, AuditReport, AuditRow, RunOptions};
