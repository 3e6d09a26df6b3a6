//! Budgeted search driver, baselines, trace output, sweeps and bootstrapping.

pub mod bootstrap;
pub mod config;
pub mod run;
pub mod sweep;
pub mod trace;

pub use bootstrap::{bootstrap_nearest, load_donors, BootstrapChoice, Donor};
pub use config::{Method, OptimizerKind, RunConfig};
pub use run::{run, run_baseline, run_search, run_with_task, write_run_outputs, RunOutcome};
pub use sweep::{sweep, SweepPoint, SweepResult};
pub use trace::{emit_trace, IterationRecord, RunStatus, Summary, Trace, TraceFormat};

use crate::archive::ArchiveError;
use crate::grpo::GrpoError;
use crate::policy::PolicyError;
use crate::sampler::SamplerError;
use crate::tasks::TaskError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
