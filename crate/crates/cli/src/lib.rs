//! Batch front end for `obsgain`: scenario files in, CSV/JSON/SVG out.
//!
//! Exit statuses: 0 success, 1 failed check or I/O error, 2 validation
//! error, 3 numerical failure, 4 non-convergence (only with
//! `--require-convergence`).

pub mod commands;
pub mod error;
pub mod scenario;
pub mod svg;

pub use commands::{Report, RunOptions};
pub use error::{CliError, CliResult};
pub use scenario::{load_scenario, Scenario, ScenarioFile};
