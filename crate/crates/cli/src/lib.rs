//! Configuration-driven experiments on top of `critexp-core`.

pub mod config;
pub mod report;
pub mod tasks;

pub use config::{ExperimentConfig, ExponentSpec, Task};
pub use report::{Format, ReportRow};
pub use tasks::{run, sweep, write_output, RunOutput};
