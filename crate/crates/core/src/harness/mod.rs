//! Experiment orchestration behind the `cteach` binary: flat key=value
//! configs, one pipeline per subcommand, and byte-stable artifacts.

pub mod config;
pub mod pipeline;

pub use config::{parse_override, parse_pairs, DataSource, ExperimentConfig, KEYS};
pub use pipeline::{
    cmd_baseline, cmd_check, cmd_generate, cmd_make_target, cmd_sweep, cmd_teach, load_dataset, load_goal,
    oblivious_share, results_csv, Outcome, ResultRow, RESULT_HEADER,
};
