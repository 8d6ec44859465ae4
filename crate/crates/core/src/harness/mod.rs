//! Configuration, Monte Carlo drivers, reports and self-checks behind the CLI.

pub mod config;
pub mod experiments;
pub mod report;
pub mod selfcheck;

use thiserror::Error;

use crate::alternating::AltError;
use crate::rounding::RoundingError;

pub use config::ExperimentSpec;
pub use experiments::{
    derive_seed, dominates, run_eve_distribution, run_power_sweep, run_ps_sensitivity,
    solve_family, solve_instance, trial_channels, EveDistOutput, EveDistRecord, InstanceOutcome,
    PsRecord, RunRecord, Scheme, SchemeResult,
};
pub use report::{
    aggregate_eve, aggregate_sweep, emit_ps_sensitivity, emit_reports, read_power_sweep,
    EveSummary, SweepPoint,
};
pub use selfcheck::{
    run_self_check, run_self_check_with, CheckHooks, SelfCheckReport, SuiteReport,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Alt(#[from] AltError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error("nothing to report: {0}")]
    Empty(String),
    #[error("i/o: {0}")]
    Io(String),
}
