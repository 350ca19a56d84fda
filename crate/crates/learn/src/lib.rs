//! Policy learning over the dialogue simulator: observation and reward
//! adapters, a clipped-surrogate actor-critic written from scratch, and the
//! condition x variant experiment campaign.

pub mod campaign;
pub mod config;
pub mod env;
pub mod nn;
pub mod ppo;
pub mod train;

pub use campaign::{MeanStd, Table, TableRow};
pub use config::LearnerConfig;
pub use env::{DialogueEnv, ObservationSpec, RewardSpec, Variant};
pub use ppo::{ActorCritic, Ppo, Rollout};
pub use train::{train_run, EpisodeStats, Metrics, RunResult, RunSpec, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("observation spec expects {expected} categories, state has {got}")]
    SpecMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Sim(Box<dt_core::SimError>),
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<dt_core::SimError> for LearnError {
    fn from(e: dt_core::SimError) -> Self {
        LearnError::Sim(Box::new(e))
    }
}
