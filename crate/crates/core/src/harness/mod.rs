//! File-driven experiments: instance loading, runners and output.

pub mod emit;
pub mod instance;
pub mod run;

pub use instance::{load_instance, parse_instance, InstanceSpec};
pub use run::{run_limit, run_limit_exact, run_montecarlo, run_sweep, ConvergenceReport, LimitArtifacts, MonteCarloReport};
