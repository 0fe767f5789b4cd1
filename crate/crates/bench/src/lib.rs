//! Shared fixtures for the benchmarks.

use dsr_core::marl::{Episode, ReplayBuffer};
use dsr_core::{Environment, GridEnv, SightRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fills a buffer with `episodes` random-policy episodes of `env` at sight `d`.
pub fn random_buffer(env: &GridEnv, d: SightRange, episodes: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env.clone();
    let mut buffer = ReplayBuffer::new(episodes);
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64));
        let mut episode = Episode::new(d, env.n_agents(), joint_obs(&env, d));
        while !env.is_done() {
            let actions: Vec<usize> = (0..env.n_agents()).map(|_| rng.gen_range(0..env.action_count())).collect();
            let step = env.step(&actions).expect("valid joint action");
            episode.push(&actions, step.reward, step.done, &joint_obs(&env, d));
        }
        buffer.push_episode(episode);
    }
    buffer
}

pub fn joint_obs(env: &GridEnv, d: SightRange) -> Vec<f64> {
    env.build_state(d).expect("sight range within bounds")
}
