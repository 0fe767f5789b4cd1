//! Single training runs and their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dsr_core::marl::LearnerManifest;
use dsr_core::neuro::read_checkpoint;
use dsr_core::trainer::{self, evaluate, Mode, TrainConfig};
use dsr_core::{MetricsTable, QLearner, SightRange};

use crate::config::{self, artifact_id, config_hash, ConfigError};
use crate::CliResult;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

/// What a run directory contains, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub output_dir: String,
    pub label: String,
    pub mode: String,
    pub metrics_id: String,
    pub checkpoint_id: String,
    pub final_d: SightRange,
    pub final_eval_return: Option<f64>,
    pub episodes: u64,
    pub env_steps: u64,
    pub epsilon: f64,
    pub learner: LearnerManifest,
}

/// Short human-readable name of a configuration's run mode.
pub fn label(cfg: &TrainConfig) -> String {
    match &cfg.mode {
        Mode::Dsr => {
            let arms: Vec<String> = cfg.dsr.sight_set.as_slice().iter().map(|d| d.to_string()).collect();
            format!("dsr {{{}}}", arms.join(","))
        }
        Mode::Fixed(d) => format!("fixed d={d}"),
        Mode::Schedule(s) => format!("schedule {s}"),
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    config::parse(&text)
}

/// Runs `cfg` and writes metrics, checkpoint, canonical config and manifest
/// into `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> CliResult<RunManifest> {
    let art = trainer::run(cfg).map_err(|e| match e {
        dsr_core::TrainError::Config { key, msg } => crate::CliError::Config(ConfigError::new(key, msg)),
        other => crate::CliError::Runtime(anyhow::Error::new(other).context("training failed")),
    })?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let metrics = art.metrics.to_csv_string().into_bytes();
    let mut checkpoint = Vec::new();
    art.write_checkpoint(&mut checkpoint).context("serializing checkpoint")?;
    let manifest = RunManifest {
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        output_dir: out.display().to_string(),
        label: label(cfg),
        mode: cfg.mode.name().to_string(),
        metrics_id: artifact_id(&metrics),
        checkpoint_id: artifact_id(&checkpoint),
        final_d: art.final_d,
        final_eval_return: art.final_eval(),
        episodes: cfg.episodes,
        env_steps: art.env_steps,
        epsilon: cfg.learner.epsilon.value(art.env_steps),
        learner: art.learner.manifest(),
    };
    let write = |name: &str, bytes: &[u8]| -> anyhow::Result<()> {
        let path = out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write(METRICS_FILE, &metrics)?;
    write(CHECKPOINT_FILE, &checkpoint)?;
    write(CONFIG_FILE, config::serialize(cfg).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    json.push('\n');
    write(MANIFEST_FILE, json.as_bytes())?;
    Ok(manifest)
}

/// `dsr train`: loads the config, applies a seed override, runs and writes.
pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: &Path) -> CliResult<RunManifest> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    train(&cfg, out)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("{}: cannot read", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: malformed manifest", path.display()))
}

/// Metrics of a run directory, or of a CSV file given directly.
pub fn read_metrics(path: &Path) -> anyhow::Result<MetricsTable> {
    let file: PathBuf = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let f = fs::File::open(&file).with_context(|| format!("{}: cannot open metrics", file.display()))?;
    MetricsTable::read_csv(f).with_context(|| format!("{}: malformed metrics", file.display()))
}

/// Settings for `dsr evaluate`; unset fields fall back to the run's own.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub d: Option<SightRange>,
    pub episodes: Option<usize>,
    pub epsilon: Option<f64>,
    pub seed: u64,
}

/// `dsr evaluate`: reloads a run's checkpoint and measures its mean return.
/// Returns the sight range used and the mean return.
pub fn cmd_evaluate(run_dir: &Path, opts: &EvalOptions) -> CliResult<(SightRange, f64)> {
    let cfg = load_config(&run_dir.join(CONFIG_FILE))?;
    let manifest = read_manifest(run_dir)?;
    let env = cfg.env.build(0).map_err(|e| ConfigError::new("env", e.to_string()))?;
    let d = opts.d.unwrap_or(manifest.final_d);
    use dsr_core::Environment;
    if d > env.max_sight() {
        return Err(ConfigError::new("--d", format!("sight range {d} exceeds the environment maximum {}", env.max_sight())).into());
    }
    let path = run_dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&path).with_context(|| format!("{}: cannot read", path.display()))?;
    let nets = read_checkpoint(bytes.as_slice()).with_context(|| format!("{}: malformed checkpoint", path.display()))?;
    // Initial parameters are overwritten by the checkpoint; the RNG only sizes them.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut learner = QLearner::new(cfg.learner.clone(), env.n_agents(), env.obs_len(), env.action_count(), &mut rng)
        .context("building learner")?;
    learner
        .load_nets(&nets)
        .with_context(|| format!("{}: does not match the configured networks", path.display()))?;
    let episodes = opts.episodes.unwrap_or(cfg.eval_episodes);
    let eps = opts.epsilon.unwrap_or(cfg.learner.eval_epsilon);
    let mean = evaluate(&learner, &env, d, episodes, eps, opts.seed).context("evaluation failed")?;
    Ok((d, mean))
}
