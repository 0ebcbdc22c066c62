//! Experiment harness for the three private inference pipelines.
//!
//! [`run_benchmark`], [`stage_breakdown`] and [`party_sweep`] time
//! pipeline batches under a network profile and return [`ReportRow`]s with
//! t-based 95% intervals; [`train_cli`] and [`privacy_eval`] train and
//! audit models. Every run also returns self-checks that tie the reported
//! rounds and bytes back to the analytic cost formulas.

mod config;
mod party;
mod published;
mod report;
mod run;
mod stats;
mod train;

use std::path::Path;

use thiserror::Error;

pub use config::{output_dir, DatasetSource, EncoderDims, ExperimentConfig, Method, E2E_TINY_LEN, E2E_TINY_RECORDS, OUT_DIR_ENV};
pub use party::{golden_party_config, run_party, PartyOutcome};
pub use published::{published_note, PublishedRow, PUBLISHED, PUBLISHED_LABEL};
pub use report::{emit_report, read_csv, stage_table, sweep_table, text_table, write_csv, Check, ReportRow, Summary, SweepRow};
pub use run::{build_bundle, party_sweep, run_benchmark, stage_breakdown, BenchOutcome};
pub use stats::{mean_ci95, student_t_975};
pub use train::{privacy_eval, train_cli, TrainOptions, TrainOutcome};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] hvfl_core::data::DataError),
    #[error(transparent)]
    Nn(#[from] hvfl_core::nn::NnError),
    #[error(transparent)]
    Vfl(#[from] hvfl_core::vfl::VflError),
    #[error(transparent)]
    Net(#[from] hvfl_core::netsim::NetError),
    #[error(transparent)]
    Privacy(#[from] hvfl_core::privacy::PrivacyError),
}

impl BenchError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        BenchError::Io { path: path.display().to_string(), msg: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
