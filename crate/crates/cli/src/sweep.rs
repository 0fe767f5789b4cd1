//! Multi-seed, multi-configuration sweeps and their summary table.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;

use dsr_core::trainer::TrainConfig;

use crate::config::{self, ConfigError, FlatConfig};
use crate::run::{self, RunManifest};
use crate::{CliError, CliResult};

/// One swept key and its values, from `--grid key=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub name: String,
    pub values: Vec<String>,
}

const SWEEPABLE: &[&str] = &[
    "dsr.enabled",
    "dsr.sight_set",
    "dsr.c",
    "dsr.w",
    "dsr.reward_divisor",
    "train.fixed_d",
    "train.schedule",
    "train.episodes",
    "algo.name",
    "algo.lr",
    "algo.hidden",
    "algo.batch_size",
    "algo.eps_anneal_steps",
    "env.coop",
    "env.n_agents",
    "env.n_foods",
    "env.width",
    "env.height",
    "env.layout",
];

impl GridAxis {
    /// Parses `key=v1,v2`; `key` is a full dotted key or an unambiguous
    /// suffix such as `fixed_d`. `dsr.sight_set` and `train.schedule`
    /// contain commas themselves, so their values are separated by `;`.
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--grid", format!("{spec:?} is not key=v1,v2,...")))?;
        let name = name.trim();
        let key = resolve_key(name)?;
        let sep = if key == "dsr.sight_set" || key == "train.schedule" { ';' } else { ',' };
        let values: Vec<String> = values
            .split(sep)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(ConfigError::new("--grid", format!("grid for {name} has no values")));
        }
        Ok(Self {
            key: key.to_string(),
            name: name.to_string(),
            values,
        })
    }
}

fn resolve_key(name: &str) -> Result<&'static str, ConfigError> {
    if let Some(k) = SWEEPABLE.iter().find(|k| **k == name) {
        return Ok(k);
    }
    let matches: Vec<&&str> = SWEEPABLE
        .iter()
        .filter(|k| k.rsplit_once('.').map(|(_, s)| s) == Some(name))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(ConfigError::new("--grid", format!("{name} is not a sweepable key"))),
        _ => Err(ConfigError::new("--grid", format!("{name} is ambiguous; use the full dotted key"))),
    }
}

/// Sets `key` and keeps exactly one run mode active.
fn apply(flat: &mut FlatConfig, key: &str, value: &str) {
    match key {
        "train.fixed_d" => {
            flat.remove("train.schedule");
            flat.set("dsr.enabled", "false");
        }
        "train.schedule" => {
            flat.remove("train.fixed_d");
            flat.set("dsr.enabled", "false");
        }
        "dsr.enabled" if value == "true" => {
            flat.remove("train.fixed_d");
            flat.remove("train.schedule");
        }
        _ => {}
    }
    flat.set(key, value);
}

/// A planned run of the sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub label: String,
    pub dir: PathBuf,
    pub cfg: TrainConfig,
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '=' { c } else { '_' })
        .collect()
}

/// Cross product of the grid axes, each with `seeds` consecutive seeds
/// starting at the base config's `train.seed`. Without axes the base
/// configuration itself is swept over seeds.
pub fn plan(base: &FlatConfig, grid: &[GridAxis], seeds: usize, out: &Path) -> Result<Vec<SweepRun>, ConfigError> {
    if seeds == 0 {
        return Err(ConfigError::new("--seeds", "must be at least 1"));
    }
    let base_cfg = config::from_flat(base)?;
    let mut combos: Vec<(String, FlatConfig)> = vec![(String::new(), base.clone())];
    for axis in grid {
        combos = combos
            .into_iter()
            .flat_map(|(label, flat)| {
                axis.values.iter().map(move |v| {
                    let mut f = flat.clone();
                    apply(&mut f, &axis.key, v);
                    let part = format!("{}={v}", axis.name);
                    let label = if label.is_empty() { part } else { format!("{label} {part}") };
                    (label, f)
                })
            })
            .collect();
    }
    let mut runs = Vec::new();
    for (label, flat) in combos {
        let cfg = config::from_flat(&flat)?;
        let label = if label.is_empty() { run::label(&cfg) } else { label };
        for s in 0..seeds as u64 {
            let seed = base_cfg.seed + s;
            runs.push(SweepRun {
                dir: out.join(dir_name(&label)).join(format!("seed{seed}")),
                label: label.clone(),
                cfg: TrainConfig { seed, ..cfg.clone() },
            });
        }
    }
    Ok(runs)
}

/// Worker count: `DSR_THREADS` if set, else the available parallelism.
pub fn threads() -> usize {
    std::env::var("DSR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every planned run on up to `workers` threads. Results come back in
/// plan order whatever the scheduling.
pub fn execute(runs: &[SweepRun], workers: usize) -> Vec<Result<RunManifest, String>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunManifest, String>>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, runs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = runs.get(i) else { break };
                let outcome = run::train(&r.cfg, &r.dir).map_err(|e| e.to_string());
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every run executed"))
        .collect()
}

/// Final evaluation statistics of one configuration across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    /// Population standard deviation across seeds.
    pub std: Option<f64>,
}

impl SummaryRow {
    /// `mean ± std` with three decimals.
    pub fn cell(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            _ => String::new(),
        }
    }
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Summary of `(config label, run directories)` groups, computed only from
/// each run's metrics CSV. Runs without readable metrics or without an
/// evaluation count as failed and are left out of the statistics.
pub fn summarize(groups: &[(String, Vec<PathBuf>)]) -> (Vec<SummaryRow>, Vec<String>) {
    let mut problems = Vec::new();
    let rows = groups
        .iter()
        .map(|(label, dirs)| {
            let mut finals = Vec::new();
            for dir in dirs {
                match run::read_metrics(dir) {
                    Ok(t) => match t.final_eval() {
                        Some(v) => finals.push(v),
                        None => problems.push(format!("{}: no evaluation recorded", dir.display())),
                    },
                    Err(e) => problems.push(format!("{e:#}")),
                }
            }
            let stats = mean_std(&finals);
            SummaryRow {
                config: label.clone(),
                runs: dirs.len(),
                failed: dirs.len() - finals.len(),
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
            }
        })
        .collect();
    (rows, problems)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "runs", "failed", "final_eval_mean", "final_eval_std", "cell"])
        .expect("in-memory write");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.config.clone(),
            r.runs.to_string(),
            r.failed.to_string(),
            opt(r.mean),
            opt(r.std),
            r.cell(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Outcome of `dsr sweep`.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    pub results: Vec<Result<RunManifest, String>>,
    pub summary: Vec<SummaryRow>,
    pub problems: Vec<String>,
}

/// `dsr sweep`: plans, executes, and writes `summary.csv` under `out`.
pub fn cmd_sweep(config_path: &Path, seeds: usize, grid: &[String], out: &Path) -> CliResult<SweepReport> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", config_path.display())))?;
    let base = FlatConfig::parse(&text)?;
    let axes = grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<Vec<_>, _>>()?;
    let runs = plan(&base, &axes, seeds, out)?;
    let results = execute(&runs, threads());

    let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for r in &runs {
        match groups.last_mut() {
            Some((label, dirs)) if *label == r.label => dirs.push(r.dir.clone()),
            _ => groups.push((r.label.clone(), vec![r.dir.clone()])),
        }
    }
    let (summary, mut problems) = summarize(&groups);
    for (r, res) in runs.iter().zip(&results) {
        if let Err(e) = res {
            problems.push(format!("{} seed {}: {e}", r.label, r.cfg.seed));
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("summary.csv");
    std::fs::write(&path, summary_csv(&summary)).with_context(|| format!("writing {}", path.display()))?;
    if results.iter().all(|r| r.is_err()) {
        return Err(CliError::Runtime(anyhow::anyhow!("every run failed: {}", problems.join("; "))));
    }
    Ok(SweepReport {
        runs,
        results,
        summary,
        problems,
    })
}
