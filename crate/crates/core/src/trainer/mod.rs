//! Training loops: bandit-selected sight ranges, fixed ranges, and fixed
//! phase schedules, with periodic evaluation and per-episode metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, Environment, LbfConfig};
use crate::marl::{LearnerConfig, MarlError};
use crate::neuro::NeuroError;
use crate::swucb::{ArmSet, BanditError, SightRange};

mod metrics;
mod run;

pub use metrics::{ArmStat, MetricsError, MetricsRow, MetricsTable};
pub use run::{evaluate, run, run_dsr, run_fixed, run_on, run_schedule, RunArtifact};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{key}: {msg}")]
    Config { key: &'static str, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
}

impl TrainError {
    fn config(key: &'static str, msg: impl Into<String>) -> Self {
        TrainError::Config { key, msg: msg.into() }
    }
}

/// Meta-controller settings. Fixed and scheduled runs still track their
/// ranges with a passive controller built from `c` and `w`, so every mode
/// reports the same per-arm columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsrConfig {
    pub sight_set: ArmSet,
    pub c: f64,
    pub w: usize,
    /// Episode returns are divided by this before reaching the bandit.
    pub reward_divisor: f64,
}

impl Default for DsrConfig {
    fn default() -> Self {
        Self {
            sight_set: ArmSet::new(vec![2, 4, 6]).expect("valid arms"),
            c: 2.0,
            w: 5000,
            reward_divisor: 1.0,
        }
    }
}

/// Piecewise-constant sight range over training, as `(start_fraction, d)`
/// phases. Start fractions begin at 0, strictly increase, and stay below 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Schedule(Vec<(f64, SightRange)>);

impl Schedule {
    pub fn new(phases: Vec<(f64, SightRange)>) -> Result<Self, String> {
        match phases.first() {
            None => return Err("schedule has no phases".into()),
            Some(&(start, _)) if start != 0.0 => return Err(format!("first phase must start at 0, got {start}")),
            _ => {}
        }
        if phases.iter().any(|&(f, _)| !(0.0..1.0).contains(&f)) {
            return Err("phase starts must lie in [0, 1)".into());
        }
        if phases.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err("phase starts must strictly increase".into());
        }
        Ok(Self(phases))
    }

    /// `n` equal phases, one per entry of `ranges`.
    pub fn equal_phases(ranges: &[SightRange]) -> Result<Self, String> {
        let n = ranges.len() as f64;
        Self::new(ranges.iter().enumerate().map(|(i, &d)| (i as f64 / n, d)).collect())
    }

    pub fn phases(&self) -> &[(f64, SightRange)] {
        &self.0
    }

    /// First episode index (0-based) of each phase for a run of `episodes`.
    pub fn boundaries(&self, episodes: u64) -> Vec<u64> {
        self.0
            .iter()
            .map(|&(f, _)| (f * episodes as f64 - 1e-9).ceil().max(0.0) as u64)
            .collect()
    }

    /// Sight range in force for 0-based `episode` of `episodes`.
    pub fn range_at(&self, episode: u64, episodes: u64) -> SightRange {
        let bounds = self.boundaries(episodes);
        let phase = bounds.partition_point(|&b| b <= episode).max(1) - 1;
        self.0[phase].1
    }

    /// Distinct ranges in increasing order.
    pub fn ranges(&self) -> Vec<SightRange> {
        let mut ds: Vec<SightRange> = self.0.iter().map(|p| p.1).collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (start, d)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{start}:{d}")?;
        }
        Ok(())
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let phases = s
            .split(',')
            .map(|part| {
                let (start, d) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| format!("phase {part:?} is not start:d"))?;
                let start: f64 = start.trim().parse().map_err(|_| format!("bad phase start {start:?}"))?;
                let d: SightRange = d.trim().parse().map_err(|_| format!("bad sight range {d:?}"))?;
                Ok((start, d))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Self::new(phases)
    }
}

impl TryFrom<String> for Schedule {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> String {
        s.to_string()
    }
}

/// Which sight-range policy drives training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dsr,
    Fixed(SightRange),
    Schedule(Schedule),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Dsr => "dsr",
            Mode::Fixed(_) => "fixed",
            Mode::Schedule(_) => "schedule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub dsr: DsrConfig,
    pub mode: Mode,
    pub episodes: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::Lbf(LbfConfig::new(10, 10, 4, 2, true)),
            learner: LearnerConfig::default(),
            dsr: DsrConfig::default(),
            mode: Mode::Dsr,
            episodes: 20_000,
            eval_interval: 500,
            eval_episodes: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Arms tracked by the meta-controller for this mode.
    pub fn arms(&self) -> Result<ArmSet, TrainError> {
        Ok(match &self.mode {
            Mode::Dsr => self.dsr.sight_set.clone(),
            Mode::Fixed(d) => ArmSet::new(vec![*d])?,
            Mode::Schedule(s) => ArmSet::new(s.ranges())?,
        })
    }

    /// Checks everything except the environment's own invariants against
    /// `max_sight`; errors name the offending config key.
    pub fn validate_against(&self, max_sight: SightRange) -> Result<(), TrainError> {
        let too_far = |key, d: SightRange| {
            if d > max_sight {
                Err(TrainError::config(key, format!("sight range {d} exceeds the environment maximum {max_sight}")))
            } else {
                Ok(())
            }
        };
        match &self.mode {
            Mode::Dsr => {
                for &d in self.dsr.sight_set.as_slice() {
                    too_far("dsr.sight_set", d)?;
                }
            }
            Mode::Fixed(d) => too_far("train.fixed_d", *d)?,
            Mode::Schedule(s) => {
                for &(_, d) in s.phases() {
                    too_far("train.schedule", d)?;
                }
            }
        }
        if !(self.dsr.c.is_finite() && self.dsr.c >= 0.0) {
            return Err(TrainError::config("dsr.c", "must be finite and non-negative"));
        }
        if self.dsr.w == 0 {
            return Err(TrainError::config("dsr.w", "must be at least 1"));
        }
        if !(self.dsr.reward_divisor.is_finite() && self.dsr.reward_divisor > 0.0) {
            return Err(TrainError::config("dsr.reward_divisor", "must be finite and positive"));
        }
        if self.episodes == 0 {
            return Err(TrainError::config("train.episodes", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::config("train.eval_interval", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(TrainError::config("train.eval_episodes", "must be at least 1"));
        }
        let l = &self.learner;
        if !(l.lr.is_finite() && l.lr > 0.0) {
            return Err(TrainError::config("algo.lr", "must be finite and positive"));
        }
        if !(0.0..=1.0).contains(&l.gamma) {
            return Err(TrainError::config("algo.gamma", "must lie in [0, 1]"));
        }
        for (key, v) in [
            ("algo.hidden", l.hidden),
            ("algo.buffer_episodes", l.buffer_episodes),
            ("algo.batch_size", l.batch_size),
            ("algo.mixing_embed", l.mixing_embed),
            ("algo.hypernet_embed", l.hypernet_embed),
        ] {
            if v == 0 {
                return Err(TrainError::config(key, "must be at least 1"));
            }
        }
        if l.target_update == 0 {
            return Err(TrainError::config("algo.target_update", "must be at least 1"));
        }
        if !(l.clip_norm.is_finite() && l.clip_norm > 0.0) {
            return Err(TrainError::config("algo.clip_norm", "must be finite and positive"));
        }
        for (key, v) in [
            ("algo.eps_start", l.epsilon.start),
            ("algo.eps_finish", l.epsilon.finish),
            ("algo.eval_eps", l.eval_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TrainError::config(key, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Full validation, including building the environment once.
    pub fn validate(&self) -> Result<(), TrainError> {
        let env = self.env.build(0).map_err(|e| TrainError::config("env", e.to_string()))?;
        self.validate_against(env.max_sight())
    }
}
