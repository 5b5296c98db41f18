//! Experiment runner: configuration, replicated simulation runs and CSV/report output.

pub mod commands;
pub mod config;
pub mod experiment;

pub use commands::{Outcome, RunContext};
pub use config::{ConfigError, ExperimentConfig, PolicyName, REFERENCE_CONFIG};
pub use experiment::{worker_pool, Experiment, NoPlan, Policy};

use hetlb::criticality::Verdict;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HEAVY_LOAD: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;
pub const EXIT_UNDECIDED: i32 = 5;

pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::HeavyLoad) => EXIT_HEAVY_LOAD,
        Ok(Outcome::Undecided) => EXIT_UNDECIDED,
        Ok(Outcome::Violated) => EXIT_RUNTIME,
        Err(e) => {
            if e.chain().any(|c| c.is::<ConfigError>()) {
                EXIT_CONFIG
            } else if let Some(NoPlan(v)) = e.chain().find_map(|c| c.downcast_ref::<NoPlan>()) {
                if *v == Verdict::HeavyLoad {
                    EXIT_HEAVY_LOAD
                } else {
                    EXIT_UNDECIDED
                }
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
