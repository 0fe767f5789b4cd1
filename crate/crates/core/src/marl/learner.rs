use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixer::{hidden_margin, QmixMixer};
use super::{Algo, LearnerConfig, MarlError, Transition};
use crate::neuro::{Adam, Mlp};

/// Welford accumulator for reward standardization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

/// Shared-parameter Q-learner.
///
/// One network maps `observation ++ one_hot(agent_id)` to a utility per
/// action for every agent. VDN sums the chosen utilities, QMIX mixes them
/// with [`QmixMixer`]; IQL regresses each agent's utility separately.
#[derive(Debug, Clone)]
pub struct QLearner {
    cfg: LearnerConfig,
    n_agents: usize,
    obs_len: usize,
    n_actions: usize,
    q: Mlp,
    target_q: Mlp,
    mixer: Option<QmixMixer>,
    target_mixer: Option<QmixMixer>,
    opt: Adam,
    reward_stats: RunningStats,
    train_steps: u64,
    last_target_update: u64,
}

/// Learner state worth recording next to a parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerManifest {
    pub algo: Algo,
    pub gamma: f64,
    pub n_agents: usize,
    pub obs_len: usize,
    pub n_actions: usize,
    pub train_steps: u64,
    pub optimizer_steps: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_count: u64,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(
        cfg: LearnerConfig,
        n_agents: usize,
        obs_len: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self, MarlError> {
        let q = Mlp::new(&[obs_len + n_agents, cfg.hidden, n_actions], rng)?;
        let mixer = match cfg.algo {
            Algo::Qmix => Some(QmixMixer::new(
                n_agents,
                n_agents * obs_len,
                cfg.mixing_embed,
                cfg.hypernet_embed,
                rng,
            )?),
            Algo::Iql | Algo::Vdn => None,
        };
        let params = q.param_count() + mixer.as_ref().map_or(0, |m| m.param_count());
        Ok(Self {
            opt: Adam::new(cfg.lr, params),
            target_q: q.clone(),
            target_mixer: mixer.clone(),
            q,
            mixer,
            cfg,
            n_agents,
            obs_len,
            n_actions,
            reward_stats: RunningStats::default(),
            train_steps: 0,
            last_target_update: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn algo(&self) -> Algo {
        self.cfg.algo
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q
    }

    pub fn q_net_mut(&mut self) -> &mut Mlp {
        &mut self.q
    }

    pub fn target_q_net(&self) -> &Mlp {
        &self.target_q
    }

    pub fn mixer(&self) -> Option<&QmixMixer> {
        self.mixer.as_ref()
    }

    pub fn mixer_mut(&mut self) -> Option<&mut QmixMixer> {
        self.mixer.as_mut()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn reward_stats(&self) -> RunningStats {
        self.reward_stats
    }

    /// Online networks in checkpoint order: the agent network, then the
    /// QMIX hypernetworks when present.
    pub fn nets(&self) -> Vec<&Mlp> {
        let mut nets = vec![&self.q];
        if let Some(m) = &self.mixer {
            nets.extend(m.nets());
        }
        nets
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        let mut nets = vec![&mut self.q];
        if let Some(m) = &mut self.mixer {
            nets.extend(m.nets_mut());
        }
        nets
    }

    /// Replaces the online and target parameters with checkpointed networks.
    pub fn load_nets(&mut self, nets: &[Mlp]) -> Result<(), MarlError> {
        let expected = self.nets().len();
        if nets.len() != expected {
            return Err(MarlError::Shape {
                expected,
                got: nets.len(),
            });
        }
        for (dst, src) in self.nets_mut().into_iter().zip(nets) {
            dst.copy_params_from(src)?;
        }
        self.hard_update_target()?;
        Ok(())
    }

    pub fn manifest(&self) -> LearnerManifest {
        LearnerManifest {
            algo: self.cfg.algo,
            gamma: self.cfg.gamma,
            n_agents: self.n_agents,
            obs_len: self.obs_len,
            n_actions: self.n_actions,
            train_steps: self.train_steps,
            optimizer_steps: self.opt.steps(),
            reward_mean: self.reward_stats.mean,
            reward_std: self.reward_stats.std(),
            reward_count: self.reward_stats.count,
        }
    }

    fn agent_input(&self, obs: &[f64], agent: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(obs);
        buf.extend((0..self.n_agents).map(|i| if i == agent { 1.0 } else { 0.0 }));
    }

    fn agent_obs<'a>(&self, joint: &'a [f64], agent: usize) -> &'a [f64] {
        &joint[agent * self.obs_len..(agent + 1) * self.obs_len]
    }

    /// Per-action utilities of `agent` given its own observation.
    pub fn q_values(&self, obs: &[f64], agent: usize) -> Result<Vec<f64>, MarlError> {
        let mut input = Vec::with_capacity(self.obs_len + self.n_agents);
        self.agent_input(obs, agent, &mut input);
        Ok(self.q.predict(&input)?)
    }

    /// Epsilon-greedy joint action from the concatenated observations.
    pub fn select_actions<R: Rng + ?Sized>(
        &self,
        joint_obs: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>, MarlError> {
        if joint_obs.len() != self.n_agents * self.obs_len {
            return Err(MarlError::Shape {
                expected: self.n_agents * self.obs_len,
                got: joint_obs.len(),
            });
        }
        let mut input = Vec::with_capacity(self.obs_len + self.n_agents);
        (0..self.n_agents)
            .map(|agent| {
                if rng.gen::<f64>() < epsilon {
                    Ok(rng.gen_range(0..self.n_actions))
                } else {
                    self.agent_input(self.agent_obs(joint_obs, agent), agent, &mut input);
                    Ok(argmax(&self.q.predict(&input)?))
                }
            })
            .collect()
    }

    /// Joint value from per-agent utilities. Undefined for IQL.
    pub fn mix(&self, per_agent_q: &[f64], state: &[f64]) -> Result<f64, MarlError> {
        if per_agent_q.len() != self.n_agents {
            return Err(MarlError::Shape {
                expected: self.n_agents,
                got: per_agent_q.len(),
            });
        }
        match self.cfg.algo {
            Algo::Iql => Err(MarlError::NoMixer(Algo::Iql)),
            Algo::Vdn => Ok(per_agent_q.iter().sum()),
            Algo::Qmix => self.mixer.as_ref().expect("qmix has a mixer").q_tot(per_agent_q, state),
        }
    }

    fn standardize(&self, r: f64) -> f64 {
        if self.cfg.standardize_rewards {
            (r - self.reward_stats.mean) / self.reward_stats.std().max(1e-6)
        } else {
            r
        }
    }

    /// Network inputs for every agent of every transition, row `b * n + i`.
    fn batch_inputs<'a>(&self, batch: &[Transition<'a>], next: bool) -> Vec<f64> {
        let width = self.obs_len + self.n_agents;
        let mut x = vec![0.0; batch.len() * self.n_agents * width];
        for (tr, rows) in batch.iter().zip(x.chunks_exact_mut(self.n_agents * width)) {
            let joint = if next { tr.next_obs } else { tr.obs };
            for (agent, row) in rows.chunks_exact_mut(width).enumerate() {
                row[..self.obs_len].copy_from_slice(self.agent_obs(joint, agent));
                row[self.obs_len + agent] = 1.0;
            }
        }
        x
    }

    fn joint_states<'a>(batch: &[Transition<'a>], next: bool) -> Vec<f64> {
        batch
            .iter()
            .flat_map(|tr| if next { tr.next_state() } else { tr.state() })
            .copied()
            .collect()
    }

    /// Bootstrapped regression targets from the target networks. One per
    /// transition and agent for IQL, one per transition otherwise.
    pub fn td_targets(&self, batch: &[Transition<'_>]) -> Result<Vec<f64>, MarlError> {
        let n = self.n_agents;
        let rows = batch.len() * n;
        let next_q = self.target_q.predict_batch(&self.batch_inputs(batch, true), rows)?;
        let next_max: Vec<f64> = next_q
            .chunks_exact(self.n_actions)
            .map(|qs| qs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mixed = match self.cfg.algo {
            Algo::Qmix => {
                let mixer = self.target_mixer.as_ref().expect("qmix has a target mixer");
                Some(mixer.q_tot_batch(&next_max, &Self::joint_states(batch, true), batch.len())?)
            }
            _ => None,
        };
        let mut out = Vec::with_capacity(rows);
        for (b, tr) in batch.iter().enumerate() {
            let r = self.standardize(tr.reward);
            let live = if tr.done { 0.0 } else { self.cfg.gamma };
            let maxes = &next_max[b * n..(b + 1) * n];
            match self.cfg.algo {
                Algo::Iql => out.extend(maxes.iter().map(|m| if tr.done { r } else { r + live * m })),
                Algo::Vdn => out.push(if tr.done { r } else { r + live * maxes.iter().sum::<f64>() }),
                Algo::Qmix => {
                    let next = mixed.as_ref().expect("mixed")[b];
                    out.push(if tr.done { r } else { r + live * next });
                }
            }
        }
        Ok(out)
    }

    /// Mean squared TD error against fixed `targets`, and its gradient with
    /// respect to every online network (order of [`Self::nets`]).
    pub fn loss_and_grads(&self, batch: &[Transition<'_>], targets: &[f64]) -> Result<(f64, Vec<Vec<f64>>), MarlError> {
        self.loss_impl(batch, targets, true)
    }

    pub fn loss(&self, batch: &[Transition<'_>], targets: &[f64]) -> Result<f64, MarlError> {
        Ok(self.loss_impl(batch, targets, false)?.0)
    }

    fn loss_impl(
        &self,
        batch: &[Transition<'_>],
        targets: &[f64],
        with_grads: bool,
    ) -> Result<(f64, Vec<Vec<f64>>), MarlError> {
        if batch.is_empty() {
            return Err(MarlError::EmptyBatch);
        }
        let n = self.n_agents;
        let per_agent = self.cfg.algo == Algo::Iql;
        let expected = if per_agent { batch.len() * n } else { batch.len() };
        if targets.len() != expected {
            return Err(MarlError::Shape {
                expected,
                got: targets.len(),
            });
        }
        let rows = batch.len() * n;
        let (qs, cache) = self.q.forward_batch(&self.batch_inputs(batch, false), rows)?;
        let chosen: Vec<f64> = batch
            .iter()
            .flat_map(|tr| tr.actions.iter())
            .zip(qs.chunks_exact(self.n_actions))
            .map(|(&a, q)| q[a])
            .collect();
        let norm = expected as f64;
        let mut grads: Vec<Vec<f64>> = if with_grads {
            self.nets().iter().map(|net| vec![0.0; net.param_count()]).collect()
        } else {
            Vec::new()
        };

        // d loss / d chosen utility, one per agent row.
        let (loss, upstream) = match self.cfg.algo {
            Algo::Iql => {
                let errs: Vec<f64> = chosen.iter().zip(targets).map(|(q, y)| q - y).collect();
                let loss = errs.iter().map(|e| e * e).sum::<f64>() / norm;
                (loss, errs.iter().map(|e| 2.0 * e / norm).collect::<Vec<f64>>())
            }
            Algo::Vdn => {
                let errs: Vec<f64> = chosen
                    .chunks_exact(n)
                    .zip(targets)
                    .map(|(q, y)| q.iter().sum::<f64>() - y)
                    .collect();
                let loss = errs.iter().map(|e| e * e).sum::<f64>() / norm;
                (loss, errs.iter().flat_map(|e| std::iter::repeat(2.0 * e / norm).take(n)).collect())
            }
            Algo::Qmix => {
                let mixer = self.mixer.as_ref().expect("qmix has a mixer");
                let (q_tot, mix_cache) = mixer.forward_batch(&chosen, &Self::joint_states(batch, false), batch.len())?;
                let errs: Vec<f64> = q_tot.iter().zip(targets).map(|(q, y)| q - y).collect();
                let loss = errs.iter().map(|e| e * e).sum::<f64>() / norm;
                let up = if with_grads {
                    let d: Vec<f64> = errs.iter().map(|e| 2.0 * e / norm).collect();
                    mixer.backward_batch_into(&mix_cache, &d, &mut grads[1..])?
                } else {
                    Vec::new()
                };
                (loss, up)
            }
        };
        if with_grads {
            let mut dy = vec![0.0; rows * self.n_actions];
            for ((row, &a), &u) in dy
                .chunks_exact_mut(self.n_actions)
                .zip(batch.iter().flat_map(|tr| tr.actions.iter()))
                .zip(&upstream)
            {
                row[a] = u;
            }
            self.q.backward_batch_into(&cache, &dy, &mut grads[0])?;
        }
        Ok((loss, grads))
    }

    /// Smallest distance of any ReLU/abs input from its kink over the batch,
    /// for choosing well-conditioned points in finite-difference checks.
    pub fn kink_margin(&self, batch: &[Transition<'_>]) -> Result<f64, MarlError> {
        let mut margin = f64::INFINITY;
        let mut input = Vec::new();
        for tr in batch {
            for agent in 0..self.n_agents {
                self.agent_input(self.agent_obs(tr.obs, agent), agent, &mut input);
                margin = margin.min(hidden_margin(&self.q, &input)?);
            }
            if let Some(m) = &self.mixer {
                margin = margin.min(m.kink_margin(tr.state())?);
            }
        }
        Ok(margin)
    }

    /// One Adam step on the squared TD error of `batch`; returns the loss.
    pub fn train_batch(&mut self, batch: &[Transition<'_>]) -> Result<f64, MarlError> {
        if batch.is_empty() {
            return Err(MarlError::EmptyBatch);
        }
        if self.cfg.standardize_rewards {
            for tr in batch {
                self.reward_stats.update(tr.reward);
            }
        }
        let targets = self.td_targets(batch)?;
        let (loss, grads) = self.loss_and_grads(batch, &targets)?;
        let clip = self.cfg.clip_norm;
        let mut nets: Vec<&mut Mlp> = vec![&mut self.q];
        if let Some(m) = &mut self.mixer {
            nets.extend(m.nets_mut());
        }
        self.opt.step(&mut nets, &grads, clip)?;
        self.train_steps += 1;
        Ok(loss)
    }

    fn hard_update_target(&mut self) -> Result<(), MarlError> {
        self.target_q.copy_params_from(&self.q)?;
        if let (Some(t), Some(m)) = (&mut self.target_mixer, &self.mixer) {
            t.copy_params_from(m)?;
        }
        Ok(())
    }

    /// Copies online parameters into the target networks once every
    /// `target_update` training steps. Returns whether a copy happened.
    pub fn maybe_update_target(&mut self) -> bool {
        let period = self.cfg.target_update.max(1);
        if self.train_steps >= self.last_target_update + period {
            self.hard_update_target().expect("target architecture matches online");
            self.last_target_update = self.train_steps;
            true
        } else {
            false
        }
    }
}
