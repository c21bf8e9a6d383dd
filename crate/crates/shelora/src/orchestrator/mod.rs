//! Experiment coordination: configuration, the toy task, non-IID data
//! partitioning, the federated round loop, and report emission.

pub mod config;
pub mod experiment;
pub mod task;

pub use config::{
    default_profiles, ExperimentConfig, HeConfig, ProfileEntry, Strategy, DEFAULT_LOCAL_STEPS,
};
pub use experiment::{
    negotiate_only, partition_noniid, run_experiment, write_reports, ExperimentOutput, PhaseTimes,
    RoundReport,
};
pub use task::{ToyTask, TaskData};

use thiserror::Error;

use crate::client::ClientError;
use crate::crypto::CryptoError;
use crate::linalg::LinalgError;
use crate::metrics::MetricsError;
use crate::sensitivity::SensitivityError;
use crate::server::ServerError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Json(#[from] serde_json::Error),
}
