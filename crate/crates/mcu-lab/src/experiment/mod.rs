//! Experiment orchestration: configuration, checkpoints, the stage runner,
//! reports, and plots.

pub mod checkpoint;
pub mod config;
pub mod plot;
pub mod report;
pub mod runner;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{DatasetSpec, ExperimentConfig, Setting, ZrfReference};
pub use plot::emit_plot;
pub use report::CSV_HEADER;
pub use runner::{
    build_dataset, emit_report, evaluate_curve, run_paths, run_setting, train_base,
    CurveEvaluation, EndpointSummary, RunManifest, ARTIFACT_VERSION, WORKERS_ENV,
};
