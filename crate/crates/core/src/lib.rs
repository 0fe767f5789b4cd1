//! Dynamic sight-range selection for cooperative multi-agent Q-learning.
//!
//! A sliding-window UCB bandit ([`swucb::MetaController`]) picks the sight
//! range each training episode is rolled out with; the episode trains a
//! shared-parameter value learner ([`marl::QLearner`]) and its return feeds
//! back into the bandit.

pub mod env;
pub mod marl;
pub mod neuro;
pub mod swucb;
pub mod trainer;

pub use env::{EnvConfig, EnvError, Environment, GridEnv, LbfConfig, RwareConfig, RwareLayout};
pub use marl::{Algo, EpsilonSchedule, LearnerConfig, QLearner};
pub use swucb::{ArmSet, MetaController, SightRange};
pub use trainer::{DsrConfig, MetricsTable, Mode, RunArtifact, Schedule, TrainConfig, TrainError};
