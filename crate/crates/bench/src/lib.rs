//! Experiment orchestration for the refsel toolkit: presets, resumable runs
//! and plot-ready aggregates.

pub mod config;
pub mod error;
pub mod plotdata;
pub mod run;

pub use config::{load_config, validate_config, ExperimentConfig, Method, Overrides, Preset};
pub use error::BenchError;
pub use plotdata::{emit_plotdata, FIGURES};
pub use run::{read_records, run_experiment, RunRecord, RunSummary};
