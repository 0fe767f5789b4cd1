use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{ArmStat, MetricsRow, MetricsTable};
use super::{Mode, TrainConfig, TrainError};
use crate::env::{Environment, GridEnv};
use crate::marl::{BatchUnit, Episode, QLearner, ReplayBuffer};
use crate::neuro::write_checkpoint;
use crate::swucb::{MetaController, SightRange};

// Independent streams of the run RNG; adding evaluations or changing the
// replay sampler never shifts the environment or exploration draws.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub metrics: MetricsTable,
    pub learner: QLearner,
    pub meta: MetaController,
    /// Sight range to execute with: the best windowed mean for bandit runs,
    /// the last range used otherwise.
    pub final_d: SightRange,
    pub env_steps: u64,
}

impl RunArtifact {
    pub fn final_eval(&self) -> Option<f64> {
        self.metrics.final_eval()
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, out: W) -> Result<(), TrainError> {
        write_checkpoint(&self.learner.nets(), out)?;
        Ok(())
    }
}

/// Mean undiscounted return of `n_episodes` fresh episodes on a clone of
/// `env`, acting epsilon-greedily at sight range `d`. Touches nothing but
/// the clone.
pub fn evaluate<E: Environment>(
    learner: &QLearner,
    env: &E,
    d: SightRange,
    n_episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    if n_episodes == 0 {
        return Err(TrainError::config("train.eval_episodes", "must be at least 1"));
    }
    let mut env = env.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut joint = vec![0.0; env.obs_len() * env.n_agents()];
    for _ in 0..n_episodes {
        env.reset(rng.gen());
        loop {
            fill_state(&env, d, &mut joint)?;
            let actions = learner.select_actions(&joint, epsilon, &mut rng)?;
            let res = env.step(&actions)?;
            total += res.reward;
            if res.done {
                break;
            }
        }
    }
    Ok(total / n_episodes as f64)
}

fn fill_state<E: Environment>(env: &E, d: SightRange, out: &mut [f64]) -> Result<(), TrainError> {
    let len = env.obs_len();
    for (agent, chunk) in out.chunks_exact_mut(len).enumerate() {
        env.observe_into(agent, d, chunk)?;
    }
    Ok(())
}

/// Runs the configured mode on a freshly built environment.
pub fn run(cfg: &TrainConfig) -> Result<RunArtifact, TrainError> {
    let env: GridEnv = cfg
        .env
        .build(0)
        .map_err(|e| TrainError::config("env", e.to_string()))?;
    run_on(cfg, env)
}

pub fn run_dsr(cfg: &TrainConfig) -> Result<RunArtifact, TrainError> {
    expect_mode(cfg, matches!(cfg.mode, Mode::Dsr), "dsr.enabled")?;
    run(cfg)
}

pub fn run_fixed(cfg: &TrainConfig) -> Result<RunArtifact, TrainError> {
    expect_mode(cfg, matches!(cfg.mode, Mode::Fixed(_)), "train.fixed_d")?;
    run(cfg)
}

pub fn run_schedule(cfg: &TrainConfig) -> Result<RunArtifact, TrainError> {
    expect_mode(cfg, matches!(cfg.mode, Mode::Schedule(_)), "train.schedule")?;
    run(cfg)
}

fn expect_mode(cfg: &TrainConfig, ok: bool, key: &'static str) -> Result<(), TrainError> {
    if ok {
        Ok(())
    } else {
        Err(TrainError::config(key, format!("run mode is {}", cfg.mode.name())))
    }
}

/// Training loop on any environment; `cfg.env` is ignored.
///
/// Per episode: pick d (bandit, fixed, or schedule), roll one episode with
/// every observation taken at d, store it, take one gradient step once the
/// buffer holds a batch, feed the scaled return to the meta-controller, and
/// evaluate every `eval_interval` episodes and after the last one.
pub fn run_on<E: Environment>(cfg: &TrainConfig, mut env: E) -> Result<RunArtifact, TrainError> {
    cfg.validate_against(env.max_sight())?;
    let arms = cfg.arms()?;
    let mut meta = MetaController::new(arms.clone(), cfg.dsr.c, cfg.dsr.w)?;

    let mut init_rng = stream(cfg.seed, STREAM_INIT);
    let mut env_rng = stream(cfg.seed, STREAM_ENV);
    let mut explore_rng = stream(cfg.seed, STREAM_EXPLORE);
    let mut replay_rng = stream(cfg.seed, STREAM_REPLAY);
    let mut eval_rng = stream(cfg.seed, STREAM_EVAL);

    let n_agents = env.n_agents();
    let mut learner = QLearner::new(cfg.learner.clone(), n_agents, env.obs_len(), env.action_count(), &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(cfg.learner.buffer_episodes);
    let mut table = MetricsTable {
        arms: arms.as_slice().to_vec(),
        rows: Vec::with_capacity(cfg.episodes as usize),
    };
    let mut env_steps = 0u64;
    let mut joint = vec![0.0; env.obs_len() * n_agents];
    let mut last_d = arms.get(0).expect("non-empty arms");

    for e in 0..cfg.episodes {
        let (arm, d) = match &cfg.mode {
            Mode::Dsr => meta.select(),
            Mode::Fixed(d) => (0, *d),
            Mode::Schedule(s) => {
                let d = s.range_at(e, cfg.episodes);
                (arms.index_of(d).expect("schedule ranges are arms"), d)
            }
        };
        last_d = d;

        env.reset(env_rng.gen());
        fill_state(&env, d, &mut joint)?;
        let mut episode = Episode::new(d, n_agents, joint.clone());
        let mut ret = 0.0;
        loop {
            let eps = cfg.learner.epsilon.value(env_steps);
            let actions = learner.select_actions(&joint, eps, &mut explore_rng)?;
            let res = env.step(&actions)?;
            env_steps += 1;
            fill_state(&env, d, &mut joint)?;
            episode.push(&actions, res.reward, res.done, &joint);
            ret += res.reward;
            if res.done {
                break;
            }
        }
        buffer.push_episode(episode);

        let ready = match cfg.learner.batch_unit {
            BatchUnit::Episodes => buffer.episodes() >= cfg.learner.batch_size,
            BatchUnit::Transitions => buffer.transitions() >= cfg.learner.batch_size,
        };
        if ready {
            let batch = match cfg.learner.batch_unit {
                BatchUnit::Episodes => buffer.sample_episodes(cfg.learner.batch_size, &mut replay_rng)?,
                BatchUnit::Transitions => buffer.sample(cfg.learner.batch_size, &mut replay_rng)?,
            };
            learner.train_batch(&batch)?;
            learner.maybe_update_target();
        }

        meta.update(arm, ret / cfg.dsr.reward_divisor)?;

        let episode_no = e + 1;
        let eval_return = if episode_no % cfg.eval_interval == 0 || episode_no == cfg.episodes {
            let eval_d = match cfg.mode {
                Mode::Dsr => meta.best_by_mean()?.1,
                _ => d,
            };
            let seed = eval_rng.gen();
            Some(evaluate(&learner, &env, eval_d, cfg.eval_episodes, cfg.learner.eval_epsilon, seed)?)
        } else {
            None
        };

        table.rows.push(MetricsRow {
            episode: episode_no,
            env_steps,
            mode: cfg.mode.name().to_string(),
            selected_d: d,
            episode_return: ret,
            eval_return,
            eps: cfg.learner.epsilon.value(env_steps),
            arms: (0..arms.len())
                .map(|a| {
                    Ok(ArmStat {
                        mean: meta.windowed_mean(a)?,
                        count: meta.windowed_count(a)?,
                    })
                })
                .collect::<Result<_, TrainError>>()?,
        });
    }

    let final_d = match cfg.mode {
        Mode::Dsr => meta.best_by_mean()?.1,
        _ => last_d,
    };
    Ok(RunArtifact {
        metrics: table,
        learner,
        meta,
        final_d,
        env_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::lbf::{Food, LbfAgent, LOAD};
    use crate::env::{EnvConfig, EnvError, Lbf, LbfConfig, StepResult};
    use crate::marl::Algo;
    use crate::swucb::ArmSet;
    use crate::trainer::{DsrConfig, Schedule};

    fn small(mode: Mode, episodes: u64) -> TrainConfig {
        let mut cfg = TrainConfig {
            env: EnvConfig::Lbf(LbfConfig {
                max_steps: 15,
                ..LbfConfig::new(5, 5, 2, 1, false)
            }),
            dsr: DsrConfig {
                sight_set: ArmSet::new(vec![1, 2, 5]).unwrap(),
                c: 2.0,
                w: 20,
                reward_divisor: 1.0,
            },
            mode,
            episodes,
            eval_interval: 10,
            eval_episodes: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        cfg.learner.algo = Algo::Qmix;
        cfg.learner.hidden = 16;
        cfg.learner.mixing_embed = 4;
        cfg.learner.hypernet_embed = 8;
        cfg.learner.batch_size = 8;
        cfg.learner.epsilon.anneal_steps = 300;
        cfg.learner.target_update = 5;
        cfg
    }

    /// One agent, one action, one-step episodes, any sight range.
    #[derive(Clone)]
    struct Stub {
        done: bool,
    }

    impl Environment for Stub {
        fn n_agents(&self) -> usize {
            1
        }
        fn action_count(&self) -> usize {
            1
        }
        fn obs_len(&self) -> usize {
            1
        }
        fn max_sight(&self) -> SightRange {
            100
        }
        fn max_steps(&self) -> u32 {
            1
        }
        fn reset(&mut self, _seed: u64) {
            self.done = false;
        }
        fn steps(&self) -> u32 {
            self.done as u32
        }
        fn is_done(&self) -> bool {
            self.done
        }
        fn observe_into(&self, _agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError> {
            out[0] = d as f64;
            Ok(())
        }
        fn step(&mut self, _actions: &[usize]) -> Result<StepResult, EnvError> {
            self.done = true;
            Ok(StepResult {
                reward: 0.5,
                done: true,
                info: Default::default(),
            })
        }
        fn state_json(&self) -> String {
            "{}".into()
        }
    }

    #[test]
    fn one_episode_per_arm_visits_arms_in_order() {
        let mut cfg = small(Mode::Dsr, 4);
        cfg.dsr.sight_set = ArmSet::new(vec![3, 7, 9, 40]).unwrap();
        let art = run_on(&cfg, Stub { done: false }).unwrap();
        let picked: Vec<SightRange> = art.metrics.rows.iter().map(|r| r.selected_d).collect();
        assert_eq!(picked, vec![3, 7, 9, 40]);
        assert!(art.metrics.rows.iter().all(|r| r.arms.iter().all(|a| a.count <= 1)));
    }

    #[test]
    fn runs_are_deterministic() {
        for mode in [Mode::Dsr, Mode::Fixed(2), Mode::Schedule("0:1,0.5:5".parse().unwrap())] {
            let cfg = small(mode, 30);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.metrics.to_csv_string(), b.metrics.to_csv_string());
            let (mut ca, mut cb) = (Vec::new(), Vec::new());
            a.write_checkpoint(&mut ca).unwrap();
            b.write_checkpoint(&mut cb).unwrap();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn single_arm_dsr_matches_fixed() {
        for d in [1, 2, 5] {
            let mut dsr = small(Mode::Dsr, 25);
            dsr.dsr.sight_set = ArmSet::new(vec![d]).unwrap();
            let fixed = small(Mode::Fixed(d), 25);
            let strip = |t: &MetricsTable| {
                let mut t = t.clone();
                t.rows.iter_mut().for_each(|r| r.mode.clear());
                t.to_csv_string()
            };
            let a = run(&dsr).unwrap();
            let b = run(&fixed).unwrap();
            assert_eq!(strip(&a.metrics), strip(&b.metrics));
            assert!(b.metrics.rows.iter().all(|r| r.selected_d == d && r.mode == "fixed"));
        }
    }

    #[test]
    fn schedule_switches_at_boundaries() {
        let cfg = small(Mode::Schedule(Schedule::equal_phases(&[1, 2, 5]).unwrap()), 30);
        let art = run_schedule(&cfg).unwrap();
        for r in &art.metrics.rows {
            let expect = match r.episode {
                1..=10 => 1,
                11..=20 => 2,
                _ => 5,
            };
            assert_eq!(r.selected_d, expect, "episode {}", r.episode);
        }
        assert_eq!(art.final_d, 5);
        assert_eq!(art.metrics.arms, vec![1, 2, 5]);
    }

    #[test]
    fn bandit_window_replays_from_metrics() {
        let mut cfg = small(Mode::Dsr, 40);
        cfg.dsr.reward_divisor = 3.0;
        let art = run_dsr(&cfg).unwrap();
        let back = MetricsTable::read_csv(art.metrics.to_csv_string().as_bytes()).unwrap();
        let mut meta = MetaController::new(ArmSet::new(back.arms.clone()).unwrap(), cfg.dsr.c, cfg.dsr.w).unwrap();
        for r in &back.rows {
            let arm = meta.arms().index_of(r.selected_d).unwrap();
            meta.update(arm, r.episode_return / cfg.dsr.reward_divisor).unwrap();
            for (a, stat) in r.arms.iter().enumerate() {
                assert_eq!(meta.windowed_mean(a).unwrap(), stat.mean);
                assert_eq!(meta.windowed_count(a).unwrap(), stat.count);
            }
        }
        assert_eq!(art.final_d, meta.best_by_mean().unwrap().1);
    }

    #[test]
    fn rows_and_evaluations() {
        let art = run(&small(Mode::Fixed(0), 25)).unwrap();
        let rows = &art.metrics.rows;
        assert_eq!(rows.len(), 25);
        assert!(rows.windows(2).all(|p| p[1].episode == p[0].episode + 1 && p[1].env_steps > p[0].env_steps));
        let evaluated: Vec<u64> = rows.iter().filter(|r| r.eval_return.is_some()).map(|r| r.episode).collect();
        assert_eq!(evaluated, vec![10, 20, 25]);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.episode_return)));
        assert_eq!(art.env_steps, rows.last().unwrap().env_steps);
    }

    #[test]
    fn wrong_mode_and_bad_range_rejected() {
        assert!(matches!(run_fixed(&small(Mode::Dsr, 1)), Err(TrainError::Config { key: "train.fixed_d", .. })));
        assert!(matches!(run(&small(Mode::Fixed(6), 1)), Err(TrainError::Config { key: "train.fixed_d", .. })));
    }

    /// Lbf whose reset always restores one hand-built state.
    #[derive(Clone)]
    struct Pinned(Lbf, Lbf);

    impl Environment for Pinned {
        fn n_agents(&self) -> usize {
            self.0.n_agents()
        }
        fn action_count(&self) -> usize {
            self.0.action_count()
        }
        fn obs_len(&self) -> usize {
            self.0.obs_len()
        }
        fn max_sight(&self) -> SightRange {
            self.0.max_sight()
        }
        fn max_steps(&self) -> u32 {
            self.0.max_steps()
        }
        fn reset(&mut self, _seed: u64) {
            self.0 = self.1.clone();
        }
        fn steps(&self) -> u32 {
            self.0.steps()
        }
        fn is_done(&self) -> bool {
            self.0.is_done()
        }
        fn observe_into(&self, agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError> {
            self.0.observe_into(agent, d, out)
        }
        fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
            self.0.step(actions)
        }
        fn state_json(&self) -> String {
            self.0.state_json()
        }
    }

    #[test]
    fn greedy_loader_solves_pinned_state() {
        let lbf = Lbf::from_state(
            LbfConfig::new(3, 3, 1, 1, false),
            vec![LbfAgent { row: 1, col: 1, level: 2 }],
            vec![Food {
                row: 0,
                col: 1,
                level: 2,
                collected: false,
            }],
        )
        .unwrap();
        let env = Pinned(lbf.clone(), lbf);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut learner = QLearner::new(small(Mode::Dsr, 1).learner, 1, env.obs_len(), env.action_count(), &mut rng).unwrap();
        let (w, b) = learner.q_net_mut().layer_mut(1);
        w.fill(0.0);
        b.fill(0.0);
        b[LOAD] = 1.0;
        let before = learner.q_net().clone();
        let mean = evaluate(&learner, &env, 1, 5, 0.0, 3).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(learner.q_net(), &before);

        let random = evaluate(&learner, &env, 3, 20, 1.0, 4).unwrap();
        assert!((0.0..=1.0).contains(&random));
        assert!(evaluate(&learner, &env, 1, 0, 0.0, 3).is_err());
    }
}
