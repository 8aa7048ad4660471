//! Config-driven experiment runner: trials, seeding, CSV output and summaries.

mod catalog;
mod config;
mod output;
mod runner;

pub use catalog::{catalog, preset, Preset};
pub use config::{AlgorithmName, DataConfig, ExperimentConfig, ExperimentKind, FederationSettings};
pub use output::{
    emit_calibration_csv, emit_csv, read_csv, summarize, CalibrationPoint, CellSummary, ResultRow,
    SummaryTable, CALIBRATION_HEADER, CSV_HEADER,
};
pub use runner::{run_experiment, Adversary, Corpus, ExperimentResult};
