//! Experiment driver: builds workloads, runs the training and unlearning
//! workflows under the configured scenario, and emits metrics.

mod config;
mod metrics;
mod mia;
mod scenario;

pub use config::{ExperimentConfig, ModelKind, Precision, Rotate, ScenarioKind, TargetLabel, SCHEMA_VERSION};
pub use metrics::{emit_metrics, read_csv, read_jsonl, to_csv, to_jsonl, write_jsonl, MetricsRecord};
pub use mia::{loss_threshold_score, mia_probe, MiaScore};
pub use scenario::{
    build_workload, key_exposure_attack, load_artifacts, run_reference, run_scenario, run_training,
    run_unlearning_scenario, verify_artifacts, write_artifacts, ArtifactCheck, Artifacts, ExposureReport,
    Outcome, ScenarioReport, Summary, TrainedState, Workload,
};

use crate::chameleon::ChameleonError;
use crate::fl::FlError;
use crate::ledger::LedgerError;
use crate::offchain::StoreError;
use crate::unlearning::UnlearnError;

/// Process exit status for a verification failure outcome.
pub const EXIT_VERIFICATION_FAILURE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("membership threshold is undefined: empty or non-finite calibration holdout")]
    DegenerateThreshold,
    #[error("round {round}: {source}")]
    Round {
        round: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Unlearn(#[from] UnlearnError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chameleon(#[from] ChameleonError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl HarnessError {
    /// Exit status for a failed run.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Unlearn(UnlearnError::Config(_)) => EXIT_CONFIG,
            HarnessError::Unlearn(UnlearnError::Verification { .. }) => EXIT_VERIFICATION_FAILURE,
            HarnessError::Round { source, .. } => source.exit_code(),
            _ => EXIT_INTERNAL,
        }
    }

    pub(crate) fn in_round(self, round: u64) -> Self {
        HarnessError::Round { round, source: Box::new(self) }
    }
}
