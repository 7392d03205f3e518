//! Scenario-driven simulator for the interlace estimators: TOML experiment
//! files in, deterministic CSV traces, plot scripts and run reports out.

pub mod compare;
pub mod error;
pub mod excite;
pub mod output;
pub mod report;
pub mod run;
pub mod scenario;

pub use compare::{compare_runs, run_directory, run_file, summarize};
pub use error::{SimError, SimResult};
pub use output::{run_scenario, RunOutput};
pub use report::RunReport;
pub use run::execute;
pub use scenario::{parse_scenario, Scenario};
