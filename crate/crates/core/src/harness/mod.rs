//! Training and evaluation runs: the control loop with the critique/tune
//! gate, baselines, checkpoints and result files.

pub mod config;
pub mod policy;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ControllerKind, CritiqueMode, ExperimentConfig, Scenario};
pub use report::{CtRecord, CtTotals, EpisodeStats, RunReport};
pub use run::{evaluate, load_checkpoint, train, train_with_runner, Agent, Checkpoint, EvalOptions, Runner};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] crate::netmodel::NetError),
    #[error(transparent)]
    Sim(#[from] crate::simcore::SimError),
    #[error(transparent)]
    Dqn(#[from] crate::dqn::DqnError),
    #[error(transparent)]
    Critique(#[from] crate::critique::CritiqueError),
    #[error(transparent)]
    Tune(#[from] crate::tune::TuneError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
