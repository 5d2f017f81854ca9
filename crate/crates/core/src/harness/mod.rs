//! Experiment harness: ablation over input variants, KG-scale sweep,
//! exact-match metrics, CSV/markdown reports and run manifests.

mod experiment;
mod manifest;
mod metrics;
mod report;

use thiserror::Error;

use crate::data::DataError;
use crate::embed::EmbedError;
use crate::kg::KgError;
use crate::model::ModelError;
use crate::trainer::TrainError;

pub use experiment::{
    build_world_vocab, derive_seed, prepare_seed, run_ablation, run_cell, run_kg_free_baseline, run_scale_sweep,
    ExperimentConfig, SeedStage, World,
};
pub use manifest::{rerun, RunManifest, MANIFEST_FILE, TOOL};
pub use metrics::{evaluate, exact_match, normalize_answer, CategoryScores, MetricsReport};
pub use report::{emit_report, median, parse_csv, render_report, to_csv, to_markdown, ReportFormat, CSV_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no reports to emit")]
    EmptyReport,
    #[error("KG fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(KgError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<KgError> for HarnessError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::InvalidFraction(f) => HarnessError::InvalidFraction(f),
            other => HarnessError::Kg(other),
        }
    }
}
