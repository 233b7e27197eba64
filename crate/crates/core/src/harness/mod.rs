//! Experiment orchestration: episodes, dual-optimizer training, evaluation,
//! transfer matrices, random search and result export.

mod config;
mod episode;
mod evaluate;
mod export;
mod search;
mod train;
mod transfer;

use thiserror::Error;

use crate::cmaes::CmaesError;
use crate::env::EnvError;
use crate::graph::GraphError;
use crate::policy::PolicyError;
use crate::reward::RewardError;

pub use config::{derive_seed, ExperimentConfig, Pairing};
pub use episode::{policy_trajectory, run_episode, Agent, EpisodeResult, StepTrace};
pub use evaluate::{evaluate, evaluate_random, replay_best, write_eval_csv, EvalReport, EVAL_SEED};
pub use export::{file_header, plot, running_mean, PlotOutput, SMOOTHING_WINDOW};
pub use search::{random_search, SearchSpace, Trial};
pub use train::{
    fitness_from_returns, load_checkpoint, run_generation, train, BestPair, Checkpoint,
    GenerationOutcome, GenerationRecord, Optimizer, TrainOptions,
};
pub use transfer::{diagonal_trend, row_colors, transfer_matrix, TransferMatrix};

/// Version string written into every output header.
pub const ARTIFACT_VERSION: &str = concat!("feudal ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Cmaes(#[from] CmaesError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("checkpoint is incompatible: {0}")]
    IncompatibleCheckpoint(String),
    #[error("no checkpoint for {0} training limbs")]
    MissingCheckpoint(usize),
    #[error("checkpoint config hash {found} does not match {expected}")]
    ConfigHashMismatch { expected: String, found: String },
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
