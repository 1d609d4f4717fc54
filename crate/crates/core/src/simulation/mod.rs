//! Synthetic capture data and replicated simulation studies.
//!
//! Two generators are built in and registered by name:
//!
//! - `mscr` walks fine time intervals and thins the memory hazard directly;
//! - `ou` moves each animal as a discretely sampled Ornstein-Uhlenbeck
//!   process and records a capture whenever it passes close to a trap.
//!
//! [`run_sim_study`] fits each requested model to many replicates and
//! summarises bias, coverage and RMSE.

mod generators;
mod study;

pub use generators::{
    simulate, simulate_mscr, simulate_ou, DataGenerator, GeneratorRegistry, MscrGenerator, OuGenerator, SimConfig,
    SimModel, SimulatedData, Trajectory, TruthRecord,
};
pub use study::{
    profile, run_sim_study, DataProfile, ReplicateFit, ReplicateResult, SimStudyReport, StudyConfig, SummaryRow,
};
