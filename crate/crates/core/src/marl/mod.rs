//! Value-based learners with parameter sharing: IQL, VDN and QMIX.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuro::NeuroError;

mod buffer;
mod learner;
mod mixer;

pub use buffer::{Episode, ReplayBuffer, Transition};
pub use learner::{LearnerManifest, QLearner, RunningStats};
pub use mixer::{MixCache, QmixMixer};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("requested {requested} transitions but only {available} are stored")]
    NotEnoughTransitions { requested: usize, available: usize },
    #[error("requested {requested} episodes but only {available} are stored")]
    NotEnoughEpisodes { requested: usize, available: usize },
    #[error("{0} has no mixing function")]
    NoMixer(Algo),
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Neuro(#[from] NeuroError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Iql,
    Vdn,
    Qmix,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Iql => "iql",
            Algo::Vdn => "vdn",
            Algo::Qmix => "qmix",
        })
    }
}

impl std::str::FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iql" => Ok(Algo::Iql),
            "vdn" => Ok(Algo::Vdn),
            "qmix" => Ok(Algo::Qmix),
            other => Err(format!("unknown algorithm {other:?} (expected iql, vdn or qmix)")),
        }
    }
}

/// Linear epsilon decay over environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub finish: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, t: u64) -> f64 {
        if t >= self.anneal_steps {
            return self.finish;
        }
        let frac = t as f64 / self.anneal_steps as f64;
        (self.start - (self.start - self.finish) * frac).max(self.finish)
    }
}

/// What `batch_size` counts when sampling from replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchUnit {
    /// Whole episodes; every transition of each sampled episode is trained on.
    Episodes,
    /// Individual transitions drawn uniformly across episodes.
    Transitions,
}

impl std::fmt::Display for BatchUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BatchUnit::Episodes => "episodes",
            BatchUnit::Transitions => "transitions",
        })
    }
}

impl std::str::FromStr for BatchUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "episodes" => Ok(BatchUnit::Episodes),
            "transitions" => Ok(BatchUnit::Transitions),
            other => Err(format!("unknown batch unit {other:?} (expected episodes or transitions)")),
        }
    }
}

/// Learner hyperparameters. Defaults are the LBF settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub algo: Algo,
    pub lr: f64,
    pub gamma: f64,
    pub hidden: usize,
    pub buffer_episodes: usize,
    pub batch_size: usize,
    pub batch_unit: BatchUnit,
    pub epsilon: EpsilonSchedule,
    pub eval_epsilon: f64,
    pub target_update: u64,
    pub clip_norm: f64,
    pub standardize_rewards: bool,
    pub mixing_embed: usize,
    pub hypernet_embed: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Qmix,
            lr: 3e-4,
            gamma: 0.99,
            hidden: 128,
            buffer_episodes: 5000,
            batch_size: 32,
            batch_unit: BatchUnit::Episodes,
            epsilon: EpsilonSchedule {
                start: 1.0,
                finish: 0.05,
                anneal_steps: 200_000,
            },
            eval_epsilon: 0.05,
            target_update: 200,
            clip_norm: 10.0,
            standardize_rewards: true,
            mixing_embed: 32,
            hypernet_embed: 64,
        }
    }
}

impl LearnerConfig {
    /// Warehouse settings: higher learning rate, longer anneal, smaller buffer.
    pub fn rware_defaults() -> Self {
        Self {
            lr: 5e-4,
            buffer_episodes: 500,
            epsilon: EpsilonSchedule {
                start: 1.0,
                finish: 0.05,
                anneal_steps: 1_000_000,
            },
            ..Self::default()
        }
    }
}
