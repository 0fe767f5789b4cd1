//! Flat `section.key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. Sections are `env.`,
//! `algo.`, `dsr.` and `train.`; unknown keys are errors. Keys left out take
//! their defaults, which depend on `env.name`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use dsr_core::marl::BatchUnit;
use dsr_core::trainer::{DsrConfig, Mode, Schedule, TrainConfig, TrainError};
use dsr_core::{Algo, ArmSet, EnvConfig, LbfConfig, LearnerConfig, RwareConfig, RwareLayout, SightRange};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{key}: {msg}")]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

impl From<TrainError> for ConfigError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { key, msg } => ConfigError::new(key, msg),
            other => ConfigError::new("config", other.to_string()),
        }
    }
}

const LBF_KEYS: &[&str] = &[
    "env.width",
    "env.height",
    "env.n_agents",
    "env.n_foods",
    "env.coop",
    "env.max_steps",
    "env.max_agent_level",
];
const RWARE_KEYS: &[&str] = &["env.layout", "env.n_agents", "env.max_steps", "env.max_sight"];
const COMMON_KEYS: &[&str] = &[
    "env.name",
    "algo.name",
    "algo.lr",
    "algo.gamma",
    "algo.hidden",
    "algo.buffer_episodes",
    "algo.batch_size",
    "algo.batch_unit",
    "algo.eps_start",
    "algo.eps_finish",
    "algo.eps_anneal_steps",
    "algo.eval_eps",
    "algo.target_update",
    "algo.clip_norm",
    "algo.standardize_rewards",
    "algo.mixing_embed",
    "algo.hypernet_embed",
    "dsr.enabled",
    "dsr.sight_set",
    "dsr.c",
    "dsr.w",
    "dsr.reward_divisor",
    "train.fixed_d",
    "train.schedule",
    "train.episodes",
    "train.eval_interval",
    "train.eval_episodes",
    "train.seed",
];

/// Raw key/value pairs in file order, duplicates rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig(BTreeMap<String, String>);

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", i + 1), "expected key = value"))?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(ConfigError::new(key, "assigned more than once"));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for FlatConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut section = "";
        for (k, v) in &self.0 {
            let s = k.split('.').next().unwrap_or("");
            if !section.is_empty() && s != section {
                writeln!(f)?;
            }
            section = s;
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    flat: &'a FlatConfig,
}

impl Reader<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.flat.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError::new(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.flat
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| ConfigError::new(key, format!("cannot parse {v:?}: {e}")))
            })
            .transpose()
    }
}

fn parse_ranges(key: &str, v: &str) -> Result<Vec<SightRange>, ConfigError> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ConfigError::new(key, format!("bad sight range {:?}", s.trim())))
        })
        .collect()
}

fn parse_layout(v: &str) -> Result<RwareLayout, String> {
    match v {
        "tiny" => Ok(RwareLayout::Tiny),
        "small" => Ok(RwareLayout::Small),
        other => Err(format!("unknown layout {other:?} (expected tiny or small)")),
    }
}

fn layout_name(l: RwareLayout) -> &'static str {
    match l {
        RwareLayout::Tiny => "tiny",
        RwareLayout::Small => "small",
    }
}

/// Builds and validates a run configuration from flat pairs.
pub fn from_flat(flat: &FlatConfig) -> Result<TrainConfig, ConfigError> {
    let r = Reader { flat };
    let env_name: String = r.get("env.name", "lbf".to_string())?;
    let env_keys = match env_name.as_str() {
        "lbf" => LBF_KEYS,
        "rware" => RWARE_KEYS,
        other => return Err(ConfigError::new("env.name", format!("unknown environment {other:?} (expected lbf or rware)"))),
    };
    for (k, _) in flat.iter() {
        if !COMMON_KEYS.contains(&k) && !env_keys.contains(&k) {
            let msg = if LBF_KEYS.contains(&k) || RWARE_KEYS.contains(&k) {
                format!("not valid for env.name = {env_name}")
            } else {
                "unknown key".to_string()
            };
            return Err(ConfigError::new(k, msg));
        }
    }

    let (env, base) = match env_name.as_str() {
        "lbf" => {
            let d = LbfConfig::new(8, 8, 2, 2, true);
            (
                EnvConfig::Lbf(LbfConfig {
                    width: r.get("env.width", d.width)?,
                    height: r.get("env.height", d.height)?,
                    n_agents: r.get("env.n_agents", d.n_agents)?,
                    n_foods: r.get("env.n_foods", d.n_foods)?,
                    coop: r.get("env.coop", d.coop)?,
                    max_steps: r.get("env.max_steps", d.max_steps)?,
                    max_agent_level: r.get("env.max_agent_level", d.max_agent_level)?,
                }),
                LearnerConfig::default(),
            )
        }
        _ => {
            let d = RwareConfig::new(RwareLayout::Tiny, 2);
            let layout = match flat.get("env.layout") {
                None => d.layout,
                Some(v) => parse_layout(v).map_err(|e| ConfigError::new("env.layout", e))?,
            };
            (
                EnvConfig::Rware(RwareConfig {
                    layout,
                    n_agents: r.get("env.n_agents", d.n_agents)?,
                    max_steps: r.get("env.max_steps", d.max_steps)?,
                    max_sight: r.get("env.max_sight", d.max_sight)?,
                }),
                LearnerConfig::rware_defaults(),
            )
        }
    };

    let mut learner = base.clone();
    learner.algo = r.get::<Algo>("algo.name", base.algo)?;
    learner.lr = r.get("algo.lr", base.lr)?;
    learner.gamma = r.get("algo.gamma", base.gamma)?;
    learner.hidden = r.get("algo.hidden", base.hidden)?;
    learner.buffer_episodes = r.get("algo.buffer_episodes", base.buffer_episodes)?;
    learner.batch_size = r.get("algo.batch_size", base.batch_size)?;
    learner.batch_unit = r.get::<BatchUnit>("algo.batch_unit", base.batch_unit)?;
    learner.epsilon.start = r.get("algo.eps_start", base.epsilon.start)?;
    learner.epsilon.finish = r.get("algo.eps_finish", base.epsilon.finish)?;
    learner.epsilon.anneal_steps = r.get("algo.eps_anneal_steps", base.epsilon.anneal_steps)?;
    learner.eval_epsilon = r.get("algo.eval_eps", base.eval_epsilon)?;
    learner.target_update = r.get("algo.target_update", base.target_update)?;
    learner.clip_norm = r.get("algo.clip_norm", base.clip_norm)?;
    learner.standardize_rewards = r.get("algo.standardize_rewards", base.standardize_rewards)?;
    learner.mixing_embed = r.get("algo.mixing_embed", base.mixing_embed)?;
    learner.hypernet_embed = r.get("algo.hypernet_embed", base.hypernet_embed)?;

    let dd = DsrConfig::default();
    let sight_set = match flat.get("dsr.sight_set") {
        None => dd.sight_set,
        Some(v) => ArmSet::new(parse_ranges("dsr.sight_set", v)?).map_err(|e| ConfigError::new("dsr.sight_set", e.to_string()))?,
    };
    let dsr = DsrConfig {
        sight_set,
        c: r.get("dsr.c", dd.c)?,
        w: r.get("dsr.w", dd.w)?,
        reward_divisor: r.get("dsr.reward_divisor", dd.reward_divisor)?,
    };

    let enabled: Option<bool> = r.opt("dsr.enabled")?;
    let fixed: Option<SightRange> = r.opt("train.fixed_d")?;
    let schedule: Option<Schedule> = match flat.get("train.schedule") {
        None => None,
        Some(v) => Some(v.parse().map_err(|e: String| ConfigError::new("train.schedule", e))?),
    };
    let mode = match (enabled.unwrap_or(false), fixed, schedule) {
        (true, None, None) => Mode::Dsr,
        (false, Some(d), None) => Mode::Fixed(d),
        (false, None, Some(s)) => Mode::Schedule(s),
        (false, None, None) => {
            return Err(ConfigError::new(
                "dsr.enabled",
                "no run mode: set dsr.enabled = true, train.fixed_d or train.schedule",
            ))
        }
        (true, _, _) => {
            let key = if fixed.is_some() { "train.fixed_d" } else { "train.schedule" };
            return Err(ConfigError::new(key, "conflicts with dsr.enabled = true; exactly one run mode may be active"));
        }
        (false, Some(_), Some(_)) => {
            return Err(ConfigError::new("train.schedule", "conflicts with train.fixed_d; exactly one run mode may be active"))
        }
    };

    let td = TrainConfig::default();
    let cfg = TrainConfig {
        env,
        learner,
        dsr,
        mode,
        episodes: r.get("train.episodes", td.episodes)?,
        eval_interval: r.get("train.eval_interval", td.eval_interval)?,
        eval_episodes: r.get("train.eval_episodes", td.eval_episodes)?,
        seed: r.get("train.seed", td.seed)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Every key with its effective value.
pub fn to_flat(cfg: &TrainConfig) -> FlatConfig {
    let mut f = FlatConfig::default();
    match &cfg.env {
        EnvConfig::Lbf(c) => {
            f.set("env.name", "lbf");
            f.set("env.width", c.width.to_string());
            f.set("env.height", c.height.to_string());
            f.set("env.n_agents", c.n_agents.to_string());
            f.set("env.n_foods", c.n_foods.to_string());
            f.set("env.coop", c.coop.to_string());
            f.set("env.max_steps", c.max_steps.to_string());
            f.set("env.max_agent_level", c.max_agent_level.to_string());
        }
        EnvConfig::Rware(c) => {
            f.set("env.name", "rware");
            f.set("env.layout", layout_name(c.layout));
            f.set("env.n_agents", c.n_agents.to_string());
            f.set("env.max_steps", c.max_steps.to_string());
            f.set("env.max_sight", c.max_sight.to_string());
        }
    }
    let l = &cfg.learner;
    f.set("algo.name", l.algo.to_string());
    f.set("algo.lr", l.lr.to_string());
    f.set("algo.gamma", l.gamma.to_string());
    f.set("algo.hidden", l.hidden.to_string());
    f.set("algo.buffer_episodes", l.buffer_episodes.to_string());
    f.set("algo.batch_size", l.batch_size.to_string());
    f.set("algo.batch_unit", l.batch_unit.to_string());
    f.set("algo.eps_start", l.epsilon.start.to_string());
    f.set("algo.eps_finish", l.epsilon.finish.to_string());
    f.set("algo.eps_anneal_steps", l.epsilon.anneal_steps.to_string());
    f.set("algo.eval_eps", l.eval_epsilon.to_string());
    f.set("algo.target_update", l.target_update.to_string());
    f.set("algo.clip_norm", l.clip_norm.to_string());
    f.set("algo.standardize_rewards", l.standardize_rewards.to_string());
    f.set("algo.mixing_embed", l.mixing_embed.to_string());
    f.set("algo.hypernet_embed", l.hypernet_embed.to_string());
    let arms: Vec<String> = cfg.dsr.sight_set.as_slice().iter().map(|d| d.to_string()).collect();
    f.set("dsr.sight_set", arms.join(","));
    f.set("dsr.c", cfg.dsr.c.to_string());
    f.set("dsr.w", cfg.dsr.w.to_string());
    f.set("dsr.reward_divisor", cfg.dsr.reward_divisor.to_string());
    match &cfg.mode {
        Mode::Dsr => f.set("dsr.enabled", "true"),
        Mode::Fixed(d) => {
            f.set("dsr.enabled", "false");
            f.set("train.fixed_d", d.to_string());
        }
        Mode::Schedule(s) => {
            f.set("dsr.enabled", "false");
            f.set("train.schedule", s.to_string());
        }
    }
    f.set("train.episodes", cfg.episodes.to_string());
    f.set("train.eval_interval", cfg.eval_interval.to_string());
    f.set("train.eval_episodes", cfg.eval_episodes.to_string());
    f.set("train.seed", cfg.seed.to_string());
    f
}

pub fn parse(text: &str) -> Result<TrainConfig, ConfigError> {
    from_flat(&FlatConfig::parse(text)?)
}

pub fn serialize(cfg: &TrainConfig) -> String {
    to_flat(cfg).to_string()
}

/// SHA-256 of the canonical form with the seed left out, so every seed of
/// one configuration shares a hash. Independent of key order in the file.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let mut flat = to_flat(cfg);
    flat.remove("train.seed");
    let mut h = Sha256::new();
    for (k, v) in flat.iter() {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

/// Content address of an artifact, in the style of a git blob id.
pub fn artifact_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
