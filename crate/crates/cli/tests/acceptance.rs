//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `DSR_ACCEPTANCE=1,2,5` restricts the run to the listed criteria.
//! The shared learning sweep (criteria 6, 7 and 9) lives under
//! `DSR_ACCEPTANCE_DIR`, default `<target>/tmp/acceptance-sweep`; runs whose
//! manifest matches the planned config hash, seed and metrics content are
//! reused instead of retrained.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsr_cli::config::{self, artifact_id, config_hash, FlatConfig};
use dsr_cli::plot::{cmd_plot, PlotKind};
use dsr_cli::run::{self, cmd_train, read_manifest, read_metrics};
use dsr_cli::sweep::{self, GridAxis, SweepRun};
use dsr_core::env::{Lbf, Rware};
use dsr_core::marl::QmixMixer;
use dsr_core::trainer::{run_dsr, run_fixed};
use dsr_core::{
    Algo, ArmSet, DsrConfig, EnvConfig, Environment, LbfConfig, LearnerConfig, MetaController, Mode, QLearner, RwareConfig, RwareLayout,
    TrainConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---- 1: SW-UCB against a brute-force window ----

struct WindowOracle {
    k: usize,
    c: f64,
    w: usize,
    history: Vec<(usize, f64)>,
}

impl WindowOracle {
    fn stats(&self, arm: usize) -> (usize, f64) {
        let window = &self.history[self.history.len().saturating_sub(self.w)..];
        window.iter().filter(|e| e.0 == arm).fold((0, 0.0), |(n, s), e| (n + 1, s + e.1))
    }

    fn score(&self, arm: usize) -> f64 {
        let (n, sum) = self.stats(arm);
        if n == 0 {
            return f64::INFINITY;
        }
        let e = self.history.len().min(self.w) as f64;
        sum / n as f64 + self.c * (e.ln() / n as f64).sqrt()
    }

    fn select(&self) -> usize {
        (0..self.k).fold(0, |best, a| if self.score(a) > self.score(best) { a } else { best })
    }

    fn best_by_mean(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..self.k {
            let (n, sum) = self.stats(a);
            if n > 0 && best.map_or(true, |(_, m)| sum / n as f64 > m) {
                best = Some((a, sum / n as f64));
            }
        }
        best.map(|b| b.0)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut decisions = 0u64;
    let mut worst = 0.0f64;
    for seq in 0..10_000 {
        let k = rng.gen_range(1..=5);
        let w = rng.gen_range(1..=50);
        let c = rng.gen_range(0.0..4.0);
        let arms = ArmSet::new((1..=k as u32).collect()).map_err(|e| e.to_string())?;
        let mut mc = MetaController::new(arms, c, w).map_err(|e| e.to_string())?;
        let mut oracle = WindowOracle { k, c, w, history: vec![] };
        for _ in 0..rng.gen_range(0..=120) {
            let (arm, _) = mc.select();
            ensure(arm == oracle.select(), || format!("sequence {seq}: select {arm} vs oracle {}", oracle.select()))?;
            let played = if rng.gen_bool(0.8) { arm } else { rng.gen_range(0..k) };
            let reward = rng.gen::<f64>();
            mc.update(played, reward).map_err(|e| e.to_string())?;
            oracle.history.push((played, reward));
            for a in 0..k {
                let (n, _) = oracle.stats(a);
                ensure(mc.windowed_count(a).unwrap() == n, || format!("sequence {seq}: count of arm {a}"))?;
                let (got, want) = (mc.ucb_score(a).unwrap(), oracle.score(a));
                if want.is_finite() {
                    worst = worst.max((got - want).abs());
                }
                ensure(got == want || (got - want).abs() <= 1e-12, || format!("sequence {seq}: score {got} vs {want}"))?;
            }
            let best = mc.best_by_mean().ok().map(|b| b.0);
            ensure(best == oracle.best_by_mean(), || format!("sequence {seq}: best_by_mean {best:?}"))?;
            decisions += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("10000 sequences, {decisions} decisions, max score error {worst:.1e}, {secs:.1} s"))
}

// ---- 2: gradients against central differences ----

/// Central difference of `f` in coordinate `i` of `x`.
fn central(x: &mut [f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Elementwise relative error. Gradients below 1e-5 are held to the implied
/// absolute 1e-9, since the difference quotient's rounding error (about
/// 1e-16 |f| / h) is of that order.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-5)
}

const FD_STEP: f64 = 1e-5;
/// Points closer than this to a ReLU or abs kink are redrawn.
const MIN_KINK_MARGIN: f64 = 1e-3;

/// Q-network `[obs_len + n_agents, 128, n_actions]` checked through the
/// scalar `<u, Q(x)>`, for parameters and inputs.
fn check_q_net(input: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Result<(usize, u64, f64), String> {
    let (mut points, mut checked, mut worst) = (0, 0u64, 0.0f64);
    while points < 100 {
        let mut net = dsr_core::neuro::Mlp::new(&[input, 128, n_actions], rng).map_err(|e| e.to_string())?;
        let mut x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (w, b) = net.layer(0);
        let margin = (0..128)
            .map(|o| (b[o] + (0..input).map(|i| w[o * input + i] * x[i]).sum::<f64>()).abs())
            .fold(f64::INFINITY, f64::min);
        if margin < MIN_KINK_MARGIN {
            continue;
        }
        let (_, cache) = net.forward(&x).map_err(|e| e.to_string())?;
        let (gp, gx) = net.backward(&cache, &u).map_err(|e| e.to_string())?;
        let dot = |y: Vec<f64>| y.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let mut params = net.params().to_vec();
        for (p, &g) in gp.iter().enumerate() {
            let fd = central(&mut params, p, FD_STEP, &mut |th| {
                net.params_mut().copy_from_slice(th);
                dot(net.predict(&x).unwrap())
            });
            net.params_mut().copy_from_slice(&params);
            worst = worst.max(rel_err(g, fd));
            ensure(rel_err(g, fd) <= 1e-4, || format!("Q-net point {points} param {p}: analytic {g} vs fd {fd}"))?;
        }
        for (i, &g) in gx.iter().enumerate() {
            let fd = central(&mut x, i, FD_STEP, &mut |xi| dot(net.predict(xi).unwrap()));
            worst = worst.max(rel_err(g, fd));
            ensure(rel_err(g, fd) <= 1e-4, || format!("Q-net point {points} input {i}: analytic {g} vs fd {fd}"))?;
        }
        checked += (gp.len() + gx.len()) as u64;
        points += 1;
    }
    Ok((points, checked, worst))
}

/// QMIX mixer with both hypernetworks: `Q_tot` against every hypernetwork
/// parameter and every agent utility.
fn check_mixer(n_agents: usize, state_dim: usize, rng: &mut ChaCha8Rng) -> Result<(usize, u64, f64), String> {
    let (mut points, mut checked, mut worst) = (0, 0u64, 0.0f64);
    while points < 100 {
        let mut mixer = QmixMixer::new(n_agents, state_dim, 32, 64, rng).map_err(|e| e.to_string())?;
        let state: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q: Vec<f64> = (0..n_agents).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if mixer.kink_margin(&state).map_err(|e| e.to_string())? < MIN_KINK_MARGIN {
            continue;
        }
        let (_, cache) = mixer.forward(&q, &state).map_err(|e| e.to_string())?;
        let mut grads: Vec<Vec<f64>> = mixer.nets().iter().map(|n| vec![0.0; n.param_count()]).collect();
        let dq = mixer.backward_into(&cache, 1.0, &mut grads).map_err(|e| e.to_string())?;
        for (k, g) in grads.iter().enumerate() {
            let mut params = mixer.nets()[k].params().to_vec();
            for (p, &a) in g.iter().enumerate() {
                let fd = central(&mut params, p, FD_STEP, &mut |th| {
                    mixer.nets_mut()[k].params_mut().copy_from_slice(th);
                    mixer.q_tot(&q, &state).unwrap()
                });
                mixer.nets_mut()[k].params_mut().copy_from_slice(&params);
                worst = worst.max(rel_err(a, fd));
                ensure(rel_err(a, fd) <= 1e-4, || format!("mixer point {points} net {k} param {p}: analytic {a} vs fd {fd}"))?;
            }
            checked += g.len() as u64;
        }
        for (i, &a) in dq.iter().enumerate() {
            let fd = central(&mut q, i, FD_STEP, &mut |qi| mixer.q_tot(qi, &state).unwrap());
            worst = worst.max(rel_err(a, fd));
            ensure(rel_err(a, fd) <= 1e-4, || format!("mixer point {points} q_{i}: analytic {a} vs fd {fd}"))?;
        }
        checked += dq.len() as u64;
        points += 1;
    }
    Ok((points, checked, worst))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut report = Vec::new();
    // The acceptance experiments run LBF 8x8 with two agents and two foods:
    // 12 observation features per agent, 6 actions, a 24-wide global state.
    // IQL, VDN and QMIX share the Q-network; QMIX adds the mixer.
    let (p, c, w) = check_q_net(12 + 2, 6, &mut rng)?;
    report.push(format!("Q-net: {p} points, {c} grads, max rel err {w:.1e}"));
    let (p, c, w) = check_mixer(2, 24, &mut rng)?;
    report.push(format!("QMIX mixer: {p} points, {c} grads, max rel err {w:.1e}"));
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{}; {secs:.1} s", report.join("; ")))
}

// ---- 3: monotone mixing and VDN IGM ----

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for probe in 0..1000 {
        let n = rng.gen_range(1..=4);
        let mixer = QmixMixer::new(n, 24, 32, 64, &mut rng).map_err(|e| e.to_string())?;
        let state: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..8.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let agent = rng.gen_range(0..n);
        let mut raised = q.clone();
        raised[agent] += rng.gen_range(0.0..3.0);
        let (a, b) = (mixer.q_tot(&q, &state).unwrap(), mixer.q_tot(&raised, &state).unwrap());
        ensure(b >= a, || format!("probe {probe}: raising q_{agent} lowered Q_tot {a} -> {b}"))?;
    }
    let mut cases = 0;
    for n in 1..=3usize {
        for m in 1..=5usize {
            for _ in 0..10 {
                let q: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
                let cfg = LearnerConfig { algo: Algo::Vdn, hidden: 8, ..LearnerConfig::default() };
                let l = QLearner::new(cfg, n, 1, m, &mut rng).map_err(|e| e.to_string())?;
                let greedy: Vec<usize> = q
                    .iter()
                    .map(|row| (0..m).fold(0, |b, a| if row[a] > row[b] { a } else { b }))
                    .collect();
                let mut best = (f64::NEG_INFINITY, vec![]);
                for code in 0..m.pow(n as u32) {
                    let actions: Vec<usize> = (0..n).map(|i| code / m.pow(i as u32) % m).collect();
                    let chosen: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| q[i][a]).collect();
                    let total = l.mix(&chosen, &vec![0.0; n]).unwrap();
                    if total > best.0 {
                        best = (total, actions);
                    }
                }
                ensure(best.1 == greedy, || format!("n={n} m={m}: joint argmax {:?} vs per-agent {greedy:?}", best.1))?;
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 monotonicity probes, {cases} exhaustive IGM cases, {secs:.1} s"))
}

// ---- 4: environment conservation and masking ----

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LbfConfig::new(8, 8, 2, 2, true);
    let mut env = Lbf::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let (mut ret, mut episodes, mut mass_total) = (0.0, 0u64, 0.0);
    for t in 0..100_000 {
        let actions: Vec<usize> = (0..2).map(|_| rng.gen_range(0..env.action_count())).collect();
        let r = env.step(&actions).map_err(|e| e.to_string())?;
        ret += r.reward;
        let s = env.state();
        let mass: u32 = s.foods.iter().filter(|f| f.collected).map(|f| f.level).sum();
        let frac = mass as f64 / s.total_food_level as f64;
        ensure((ret - frac).abs() < 1e-9, || format!("LBF step {t}: return {ret} vs collected fraction {frac}"))?;
        ensure((0.0..=1.0).contains(&frac), || format!("LBF step {t}: fraction {frac}"))?;
        ensure(s.step <= 50, || format!("LBF step {t}: episode ran past 50 steps"))?;
        ensure(r.done == (s.step == 50 || s.foods.iter().all(|f| f.collected)), || format!("LBF step {t}: done flag"))?;
        if r.done {
            mass_total += ret;
            episodes += 1;
            ret = 0.0;
            env.reset(episodes);
        }
    }

    let rcfg = RwareConfig::new(RwareLayout::Tiny, 2);
    let mut env = Rware::new(rcfg.clone(), 0).map_err(|e| e.to_string())?;
    let reach = env.max_sight() as usize;
    let side = 2 * reach + 1;
    let (mut ret, mut r_episodes, mut deliveries) = (0.0, 0u64, 0u64);
    for t in 0..100_000 {
        for agent in 0..2 {
            let full = env.observe(agent, reach as u32).unwrap();
            for d in 0..reach {
                let mut want = full.clone();
                for i in 0..side {
                    for j in 0..side {
                        if i.abs_diff(reach).max(j.abs_diff(reach)) > d {
                            let at = 5 + (i * side + j) * 7;
                            want[at..at + 7].fill(0.0);
                        }
                    }
                }
                ensure(env.observe(agent, d as u32).unwrap() == want, || format!("RWARE step {t}: agent {agent} masking at d={d}"))?;
            }
        }
        let actions: Vec<usize> = (0..2).map(|_| rng.gen_range(0..env.action_count())).collect();
        let r = env.step(&actions).map_err(|e| e.to_string())?;
        ret += r.reward;
        ensure(ret == r.info["deliveries"] as f64, || format!("RWARE step {t}: return {ret} vs deliveries"))?;
        ensure(env.requested_count() == rcfg.n_requests(), || format!("RWARE step {t}: requested count changed"))?;
        ensure(r.done == (env.state().step == 500), || format!("RWARE step {t}: done flag"))?;
        if r.done {
            deliveries += r.info["deliveries"];
            r_episodes += 1;
            ret = 0.0;
            env.reset(r_episodes);
        }
    }
    Ok(format!(
        "LBF 1e5 steps over {episodes} episodes (mean return {:.4}); RWARE 1e5 steps over {r_episodes} episodes, {deliveries} deliveries, masking checked for d < {reach}",
        mass_total / episodes.max(1) as f64
    ))
}

// ---- 5: single-arm DSR equals the fixed run ----

/// Metrics CSV with the `mode` column's values blanked.
fn without_mode(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            if cells.len() > 2 && !line.starts_with("episode,") {
                cells[2] = "";
            }
            cells.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_5() -> Outcome {
    let learner = |algo| LearnerConfig { algo, hidden: 32, batch_size: 4, buffer_episodes: 50, ..LearnerConfig::default() };
    let cases = [
        (EnvConfig::Lbf(LbfConfig::new(8, 8, 2, 2, true)), Algo::Iql, 2),
        (EnvConfig::Lbf(LbfConfig::new(6, 6, 3, 2, false)), Algo::Qmix, 1),
        (EnvConfig::Rware(RwareConfig { max_steps: 60, ..RwareConfig::new(RwareLayout::Tiny, 2) }), Algo::Vdn, 3),
    ];
    let mut lines = Vec::new();
    for (env, algo, d) in cases {
        let base = TrainConfig {
            env,
            learner: learner(algo),
            dsr: DsrConfig { sight_set: ArmSet::new(vec![d]).unwrap(), ..DsrConfig::default() },
            mode: Mode::Dsr,
            episodes: 60,
            eval_interval: 20,
            eval_episodes: 5,
            seed: 11,
        };
        let dsr = run_dsr(&base).map_err(|e| e.to_string())?;
        let fixed = run_fixed(&TrainConfig { mode: Mode::Fixed(d), ..base.clone() }).map_err(|e| e.to_string())?;
        let (a, b) = (dsr.metrics.to_csv_string(), fixed.metrics.to_csv_string());
        ensure(without_mode(&a) == without_mode(&b), || format!("{algo} d={d}: metrics differ"))?;
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        dsr.write_checkpoint(&mut ca).unwrap();
        fixed.write_checkpoint(&mut cb).unwrap();
        ensure(ca == cb, || format!("{algo} d={d}: checkpoints differ"))?;
        lines.push(format!("{algo} d={d}"));
    }
    Ok(format!("identical metrics (mode column aside) and checkpoints for {}", lines.join(", ")))
}

// ---- 6, 7, 9: the shared learning sweep ----

struct Sweep {
    dsr: Vec<PathBuf>,
    fixed: BTreeMap<u32, Vec<PathBuf>>,
    trained: usize,
    reused: usize,
    secs: f64,
}

fn sweep_root() -> PathBuf {
    std::env::var_os("DSR_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-sweep"))
}

/// True when `run.dir` already holds the finished output of exactly `run.cfg`.
fn reusable(run: &SweepRun) -> bool {
    let Ok(m) = read_manifest(&run.dir) else { return false };
    let Ok(metrics) = fs::read(run.dir.join(run::METRICS_FILE)) else { return false };
    m.config_hash == config_hash(&run.cfg) && m.seed == run.cfg.seed && m.metrics_id == artifact_id(&metrics)
}

fn build_sweep() -> Result<Sweep, String> {
    let start = Instant::now();
    let text = fs::read_to_string(workspace().join("configs/lbf-8x8-coop-dsr.txt")).map_err(|e| e.to_string())?;
    let base = FlatConfig::parse(&text).map_err(|e| e.to_string())?;
    let cfg = config::from_flat(&base).map_err(|e| e.to_string())?;
    ensure(
        matches!(cfg.env, EnvConfig::Lbf(ref l) if l.width == 8 && l.height == 8 && l.n_agents == 2 && l.n_foods == 2 && l.coop)
            && cfg.dsr.sight_set.as_slice() == [1, 2, 4, 8]
            && cfg.dsr.c == 2.0
            && cfg.dsr.w == 500
            && cfg.episodes == 20_000
            && cfg.learner.algo == Algo::Iql,
        || "configs/lbf-8x8-coop-dsr.txt no longer matches the acceptance setting".into(),
    )?;
    let root = sweep_root();
    let dsr_runs = sweep::plan(&base, &[], 5, &root.join("dsr")).map_err(|e| e.to_string())?;
    let axis = GridAxis::parse("train.fixed_d=1,2,4,8").map_err(|e| e.to_string())?;
    let fixed_runs = sweep::plan(&base, &[axis], 5, &root.join("fixed")).map_err(|e| e.to_string())?;
    let all: Vec<SweepRun> = dsr_runs.iter().chain(&fixed_runs).cloned().collect();
    let todo: Vec<SweepRun> = all.iter().filter(|r| !reusable(r)).cloned().collect();
    eprintln!("acceptance sweep: {} of {} runs to train under {}", todo.len(), all.len(), root.display());
    for (r, res) in todo.iter().zip(sweep::execute(&todo, sweep::threads())) {
        res.map_err(|e| format!("{}: {e}", r.dir.display()))?;
    }
    let mut fixed: BTreeMap<u32, Vec<PathBuf>> = BTreeMap::new();
    for r in &fixed_runs {
        let Mode::Fixed(d) = r.cfg.mode else { return Err("grid produced a non-fixed run".into()) };
        fixed.entry(d).or_default().push(r.dir.clone());
    }
    Ok(Sweep {
        dsr: dsr_runs.into_iter().map(|r| r.dir).collect(),
        fixed,
        trained: todo.len(),
        reused: all.len() - todo.len(),
        secs: start.elapsed().as_secs_f64(),
    })
}

fn shared_sweep() -> Result<&'static Sweep, String> {
    static SWEEP: OnceLock<Result<Sweep, String>> = OnceLock::new();
    SWEEP.get_or_init(build_sweep).as_ref().map_err(Clone::clone)
}

fn final_means(dirs: &[PathBuf]) -> Result<(f64, Vec<f64>), String> {
    let finals = dirs
        .iter()
        .map(|d| {
            read_metrics(d)
                .map_err(|e| format!("{e:#}"))?
                .final_eval()
                .ok_or_else(|| format!("{}: no evaluation", d.display()))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    Ok((finals.iter().sum::<f64>() / finals.len() as f64, finals))
}

fn criterion_6() -> Outcome {
    let s = shared_sweep()?;
    let (dsr, dsr_all) = final_means(&s.dsr)?;
    let mut fixed = BTreeMap::new();
    for (d, dirs) in &s.fixed {
        fixed.insert(*d, final_means(dirs)?.0);
    }
    let (best_d, best) = fixed.iter().fold((0, f64::NEG_INFINITY), |acc, (&d, &m)| if m > acc.1 { (d, m) } else { acc });
    let full = fixed[&8];
    let table = fixed.iter().map(|(d, m)| format!("d={d} {m:.3}")).collect::<Vec<_>>().join(", ");
    let per_seed = dsr_all.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "DSR {dsr:.3} (seeds {per_seed}); fixed {table}; need >= 0.9 x {best:.3} (d={best_d}) = {:.3} and > {full:.3}; sweep {} trained, {} reused, {:.0} s",
        0.9 * best,
        s.trained,
        s.reused,
        s.secs
    );
    ensure(dsr >= 0.9 * best && dsr > full, || detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let s = shared_sweep()?;
    let full = final_means(&s.fixed[&8])?.0;
    let mut gaps = Vec::new();
    for d in [1, 2, 4] {
        gaps.push((d, final_means(&s.fixed[&d])?.0 - full));
    }
    let text = gaps.iter().map(|(d, g)| format!("d={d} {g:+.3}")).collect::<Vec<_>>().join(", ");
    let detail = format!("gap to d=8 ({full:.3}): {text}; need one >= +0.05");
    ensure(gaps.iter().any(|&(_, g)| g >= 0.05), || detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    let configs = [
        ("lbf-8x8-coop-dsr.txt", "train.episodes = 20000", "train.episodes = 400"),
        ("rware-tiny-2ag-fixed.txt", "train.episodes = 2000", "train.episodes = 30"),
    ];
    for (name, from, to) in configs {
        let text = fs::read_to_string(workspace().join("configs").join(name)).map_err(|e| e.to_string())?;
        ensure(text.contains(from), || format!("{name} lacks `{from}`"))?;
        let path = tmp.path().join(name);
        fs::write(&path, text.replace(from, to)).map_err(|e| e.to_string())?;
        let (a, b) = (tmp.path().join(format!("{name}.a")), tmp.path().join(format!("{name}.b")));
        cmd_train(&path, Some(5), &a).map_err(|e| e.to_string())?;
        cmd_train(&path, Some(5), &b).map_err(|e| e.to_string())?;
        for f in [run::METRICS_FILE, run::CHECKPOINT_FILE] {
            let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
            ensure(x == y, || format!("{name}: {f} differs between runs"))?;
        }
        checked.push(name);
    }
    Ok(format!("byte-identical metrics.csv and checkpoint.bin for {}", checked.join(", ")))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|v| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"))).collect()
}

fn criterion_9() -> Outcome {
    let s = shared_sweep()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("selected_d.svg");
    cmd_plot(&s.dsr, PlotKind::SelectedD, &out).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| format!("invalid SVG: {e}"))?;
    ensure(doc.root_element().tag_name().name() == "svg", || "root element is not <svg>".into())?;
    let series: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("series")).collect();
    ensure(series.len() == s.dsr.len(), || format!("{} series for {} runs", series.len(), s.dsr.len()))?;
    let mut points = 0;
    for dir in &s.dsr {
        let label = dir.display().to_string();
        let g = series
            .iter()
            .find(|n| n.attribute("data-label") == Some(label.as_str()))
            .ok_or_else(|| format!("no series for {label}"))?;
        let line = g
            .descendants()
            .find(|n| n.attribute("class") == Some("line"))
            .ok_or_else(|| format!("{label}: no line"))?;
        let values = parse_list(line.attribute("data-values").unwrap_or(""))?;
        let xs = parse_list(line.attribute("data-x").unwrap_or(""))?;
        let metrics = read_metrics(dir).map_err(|e| format!("{e:#}"))?;
        let want: Vec<f64> = metrics.rows.iter().map(|r| r.selected_d as f64).collect();
        let want_x: Vec<f64> = metrics.rows.iter().map(|r| r.episode as f64).collect();
        ensure(values == want, || format!("{label}: plotted values differ from the selected_d column"))?;
        ensure(xs == want_x, || format!("{label}: plotted episodes differ"))?;
        // The drawn vertices must encode the same values: pixel y is affine in d.
        let pix: Vec<(f64, f64)> = line
            .attribute("points")
            .unwrap_or("")
            .split_whitespace()
            .map(|p| {
                let (x, y) = p.split_once(',').ok_or("bad point")?;
                Ok((x.parse::<f64>().map_err(|_| "bad x")?, y.parse::<f64>().map_err(|_| "bad y")?))
            })
            .collect::<Result<_, &str>>()?;
        ensure(pix.len() == want.len(), || format!("{label}: {} vertices for {} episodes", pix.len(), want.len()))?;
        let lo = want.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = want.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let (i_lo, i_hi) = (want.iter().position(|&v| v == lo).unwrap(), want.iter().position(|&v| v == hi).unwrap());
            let (y_lo, y_hi) = (pix[i_lo].1, pix[i_hi].1);
            for (i, &(_, y)) in pix.iter().enumerate() {
                let back = lo + (y - y_lo) / (y_hi - y_lo) * (hi - lo);
                ensure((back - want[i]).abs() < 0.02 * (hi - lo), || format!("{label}: vertex {i} reads {back:.3}, want {}", want[i]))?;
            }
        }
        points += want.len();
    }
    Ok(format!("{} series, {points} plotted points match the selected_d columns", series.len()))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<u32>> = std::env::var("DSR_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "SW-UCB oracle equivalence", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "QMIX monotonicity and VDN IGM", criterion_3),
        (4, "environment conservation", criterion_4),
        (5, "single-arm degeneration", criterion_5),
        (6, "desk-scale DSR effectiveness", criterion_6),
        (7, "sight-range dilemma", criterion_7),
        (8, "determinism", criterion_8),
        (9, "selected-sight plot", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
