//! Simulated experiments: conditions and subjects, target datasets, batch
//! runs driven by the simulated agent, and the outcome analyses.

pub mod analysis;
pub mod condition;
pub mod dataset;
pub mod runner;

pub use analysis::{log_odds, pooled_log_odds, summarize_mse_curves, ConditionSummary, MseSummary, PooledTest};
pub(crate) use condition::stream;
pub use condition::{derived_rng, derived_seed, make_subject, Condition, ConditionKind, SubjectSpec};
pub use dataset::{load_target_pools, load_training_targets, TargetPools};
pub use runner::{calibrate_agent, drive_session, read_results, run_experiment, run_session, subject_seed, write_outputs, ExperimentResult, SimulationConfig};
