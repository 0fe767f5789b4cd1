//! Dec-POMDP environment contract.
//!
//! Environments expose the sight range per `observe` call rather than fixing
//! it at reset, so a trainer can roll an episode at one range and evaluate at
//! another without rebuilding anything. Observation length never depends on
//! the sight range: a single network serves every range.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::swucb::SightRange;

pub mod lbf;
pub mod rware;

pub use lbf::{Lbf, LbfConfig};
pub use rware::{Rware, RwareConfig, RwareLayout};

pub type Observation = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("sight range {d} exceeds the maximum {max}")]
    SightOutOfRange { d: SightRange, max: SightRange },
    #[error("agent {agent} out of range for {n_agents} agents")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("joint action has {got} entries, expected {expected}")]
    JointActionLength { expected: usize, got: usize },
    #[error("agent {agent} chose action {action}, but only {count} actions exist")]
    InvalidAction {
        agent: usize,
        action: usize,
        count: usize,
    },
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// Outcome of one environment tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Shared team reward.
    pub reward: f64,
    pub done: bool,
    /// Cumulative event counters for the current episode.
    pub info: BTreeMap<&'static str, u64>,
}

pub trait Environment: Clone + Send {
    fn n_agents(&self) -> usize;
    fn action_count(&self) -> usize;
    fn obs_len(&self) -> usize;
    fn max_sight(&self) -> SightRange;
    fn max_steps(&self) -> u32;

    /// Redraws the initial state deterministically from `seed`.
    fn reset(&mut self, seed: u64);

    /// Ticks elapsed in the current episode.
    fn steps(&self) -> u32;

    fn is_done(&self) -> bool;

    /// Writes the `obs_len` features agent `agent` sees at sight range `d`.
    fn observe_into(&self, agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError>;

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;

    /// Canonical JSON form of the full state (entities in fixed order).
    fn state_json(&self) -> String;

    fn observe(&self, agent: usize, d: SightRange) -> Result<Observation, EnvError> {
        let mut out = vec![0.0; self.obs_len()];
        self.observe_into(agent, d, &mut out)?;
        Ok(out)
    }

    /// Concatenation of every agent's observation at `d`, in agent order.
    fn build_state(&self, d: SightRange) -> Result<Vec<f64>, EnvError> {
        let len = self.obs_len();
        let mut out = vec![0.0; len * self.n_agents()];
        for (agent, chunk) in out.chunks_exact_mut(len).enumerate() {
            self.observe_into(agent, d, chunk)?;
        }
        Ok(out)
    }
}

pub(crate) fn check_observe(
    agent: usize,
    n_agents: usize,
    d: SightRange,
    max: SightRange,
    out_len: usize,
    obs_len: usize,
) -> Result<(), EnvError> {
    if agent >= n_agents {
        return Err(EnvError::AgentOutOfRange { agent, n_agents });
    }
    if d > max {
        return Err(EnvError::SightOutOfRange { d, max });
    }
    assert_eq!(out_len, obs_len, "observation buffer has the wrong length");
    Ok(())
}

pub(crate) fn check_joint_action(actions: &[usize], n_agents: usize, count: usize) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::JointActionLength {
            expected: n_agents,
            got: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= count) {
        return Err(EnvError::InvalidAction {
            agent,
            action,
            count,
        });
    }
    Ok(())
}

/// Chebyshev distance between two grid cells given as `(row, col)`.
pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Configuration for any of the bundled grid worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvConfig {
    Lbf(LbfConfig),
    Rware(RwareConfig),
}

impl EnvConfig {
    pub fn build(&self, seed: u64) -> Result<GridEnv, EnvError> {
        Ok(match self {
            EnvConfig::Lbf(cfg) => GridEnv::Lbf(Lbf::new(cfg.clone(), seed)?),
            EnvConfig::Rware(cfg) => GridEnv::Rware(Rware::new(cfg.clone(), seed)?),
        })
    }
}

/// Runtime-selected environment.
#[derive(Debug, Clone)]
pub enum GridEnv {
    Lbf(Lbf),
    Rware(Rware),
}

macro_rules! delegate {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            GridEnv::Lbf($env) => $body,
            GridEnv::Rware($env) => $body,
        }
    };
}

impl Environment for GridEnv {
    fn n_agents(&self) -> usize {
        delegate!(self, e => e.n_agents())
    }
    fn action_count(&self) -> usize {
        delegate!(self, e => e.action_count())
    }
    fn obs_len(&self) -> usize {
        delegate!(self, e => e.obs_len())
    }
    fn max_sight(&self) -> SightRange {
        delegate!(self, e => e.max_sight())
    }
    fn max_steps(&self) -> u32 {
        delegate!(self, e => e.max_steps())
    }
    fn reset(&mut self, seed: u64) {
        delegate!(self, e => e.reset(seed))
    }
    fn steps(&self) -> u32 {
        delegate!(self, e => e.steps())
    }
    fn is_done(&self) -> bool {
        delegate!(self, e => e.is_done())
    }
    fn observe_into(&self, agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError> {
        delegate!(self, e => e.observe_into(agent, d, out))
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        delegate!(self, e => e.step(actions))
    }
    fn state_json(&self) -> String {
        delegate!(self, e => e.state_json())
    }
}
