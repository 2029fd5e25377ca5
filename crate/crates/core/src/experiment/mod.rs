//! Experiment orchestration and the command-line interface.
//!
//! Every run directory holds `metrics.csv`, `predictions.csv`, a
//! `manifest.txt` with the config hash and seed, and fold checkpoints under
//! `checkpoints/`. Runs are single-threaded and seeded, so identical config
//! and seed give byte-identical metrics files.

mod artifacts;
mod cli;
mod config;
mod runner;

pub use artifacts::{
    emit_prediction_geojson, load_predictions, read_predictions, save_metrics, save_predictions, write_predictions,
    PredictionRow, METRICS_FILE, PREDICTIONS_FILE, PREDICTIONS_HEADER, RUN_MANIFEST_FILE,
};
pub use cli::{run_cli, USAGE};
pub use config::{resolve_config, BaselineKind, ExperimentConfig, KeyValues, CONFIG_KEYS, SWEEP_FRACTIONS};
pub use runner::{
    extract_features, ingest_check, load_data, load_source, predict_scores, reports_from_rows, run_baseline,
    run_finetune_sweep, run_holdout, run_train_cv, run_urban_rural, train_model, FittedModel, HoldoutRun,
    LoadedData, RunArtifacts, StratumRun, SweepRow, SweepRun,
};
