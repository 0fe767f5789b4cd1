use std::collections::VecDeque;

use rand::Rng;

use super::MarlError;
use crate::swucb::SightRange;

/// One rolled-out episode, stored frame by frame.
///
/// `frames` holds `len + 1` joint observations (all agents concatenated, at
/// the episode's sight range); a joint observation doubles as the mixer
/// state. Transition `t` goes from frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub sight: SightRange,
    joint_len: usize,
    n_agents: usize,
    frames: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Borrowed view of a single stored transition.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub obs: &'a [f64],
    pub next_obs: &'a [f64],
    pub actions: &'a [usize],
    pub reward: f64,
    pub done: bool,
    pub sight: SightRange,
}

impl<'a> Transition<'a> {
    /// Mixer state: the concatenated observations.
    pub fn state(&self) -> &'a [f64] {
        self.obs
    }

    pub fn next_state(&self) -> &'a [f64] {
        self.next_obs
    }
}

impl Episode {
    pub fn new(sight: SightRange, n_agents: usize, first_joint_obs: Vec<f64>) -> Self {
        Self {
            sight,
            joint_len: first_joint_obs.len(),
            n_agents,
            frames: first_joint_obs,
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    /// Appends one tick: the joint action taken, its reward, and the next joint observation.
    pub fn push(&mut self, actions: &[usize], reward: f64, done: bool, next_joint_obs: &[f64]) {
        assert_eq!(actions.len(), self.n_agents, "joint action length");
        assert_eq!(next_joint_obs.len(), self.joint_len, "joint observation length");
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.dones.push(done);
        self.frames.extend_from_slice(next_joint_obs);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Undiscounted return.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn transition(&self, t: usize) -> Transition<'_> {
        let j = self.joint_len;
        Transition {
            obs: &self.frames[t * j..(t + 1) * j],
            next_obs: &self.frames[(t + 1) * j..(t + 2) * j],
            actions: &self.actions[t * self.n_agents..(t + 1) * self.n_agents],
            reward: self.rewards[t],
            done: self.dones[t],
            sight: self.sight,
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        (0..self.len()).map(|t| self.transition(t))
    }
}

/// Episode ring buffer with uniform transition sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::new(),
            transitions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn episode(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    pub fn push_episode(&mut self, episode: Episode) {
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        if self.episodes.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty");
            self.transitions -= old.len();
        }
    }

    /// `k` distinct transitions drawn uniformly from everything stored.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Transition<'_>>, MarlError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.transitions == 0 {
            return Err(MarlError::EmptyBuffer);
        }
        if k > self.transitions {
            return Err(MarlError::NotEnoughTransitions {
                requested: k,
                available: self.transitions,
            });
        }
        let mut starts = Vec::with_capacity(self.episodes.len());
        let mut acc = 0;
        for ep in &self.episodes {
            starts.push(acc);
            acc += ep.len();
        }
        Ok(rand::seq::index::sample(rng, self.transitions, k)
            .into_iter()
            .map(|g| {
                // Last episode starting at or before g; empty episodes share
                // their successor's start and are skipped.
                let e = starts.partition_point(|&s| s <= g) - 1;
                let ep = &self.episodes[e];
                ep.transition(g - starts[e])
            })
            .collect())
    }
}

impl ReplayBuffer {
    /// Every transition of `k` distinct episodes drawn uniformly.
    pub fn sample_episodes<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Transition<'_>>, MarlError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.episodes.is_empty() {
            return Err(MarlError::EmptyBuffer);
        }
        if k > self.episodes.len() {
            return Err(MarlError::NotEnoughEpisodes {
                requested: k,
                available: self.episodes.len(),
            });
        }
        Ok(rand::seq::index::sample(rng, self.episodes.len(), k)
            .into_iter()
            .flat_map(|e| self.episodes[e].transitions())
            .collect())
    }
}
