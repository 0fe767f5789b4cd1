use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsr_core::marl::QmixMixer;
use dsr_core::{Algo, LearnerConfig, QLearner};

fn learner(algo: Algo, n_agents: usize, obs_len: usize, n_actions: usize, seed: u64) -> QLearner {
    let cfg = LearnerConfig {
        algo,
        hidden: 16,
        mixing_embed: 8,
        hypernet_embed: 16,
        ..LearnerConfig::default()
    };
    QLearner::new(cfg, n_agents, obs_len, n_actions, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Every joint action of `n_agents` agents with `n_actions` actions each.
fn joint_actions(n_agents: usize, n_actions: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    for _ in 0..n_agents {
        all = all
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..n_actions).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    all
}

/// Exhaustive joint argmax of `mix` agrees with the per-agent argmax tuple.
fn check_igm(l: &QLearner, rng: &mut ChaCha8Rng) {
    let (n, m, obs_len) = (l.n_agents(), l.n_actions(), l.obs_len());
    let joint: Vec<f64> = (0..n * obs_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let qs: Vec<Vec<f64>> = (0..n).map(|i| l.q_values(&joint[i * obs_len..(i + 1) * obs_len], i).unwrap()).collect();
    let greedy: Vec<usize> = qs.iter().map(|q| argmax(q)).collect();
    let mut best = (f64::NEG_INFINITY, vec![]);
    for actions in joint_actions(n, m) {
        let chosen: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| qs[i][a]).collect();
        let total = l.mix(&chosen, &joint).unwrap();
        if total > best.0 {
            best = (total, actions);
        }
    }
    let greedy_q: Vec<f64> = greedy.iter().enumerate().map(|(i, &a)| qs[i][a]).collect();
    assert_eq!(l.mix(&greedy_q, &joint).unwrap(), best.0, "greedy tuple {greedy:?} vs joint argmax {:?}", best.1);
}

#[test]
fn vdn_joint_argmax_is_per_agent_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in 1..=3 {
        for m in 1..=5 {
            let l = learner(Algo::Vdn, n, 4, m, (n * 10 + m) as u64);
            for _ in 0..20 {
                check_igm(&l, &mut rng);
            }
        }
    }
}

#[test]
fn qmix_joint_argmax_is_per_agent_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=3 {
        for m in 1..=5 {
            let l = learner(Algo::Qmix, n, 4, m, (n * 10 + m) as u64);
            for _ in 0..20 {
                check_igm(&l, &mut rng);
            }
        }
    }
}

#[test]
fn iql_has_no_mixer() {
    let l = learner(Algo::Iql, 2, 3, 3, 0);
    assert!(l.mix(&[0.0, 0.0], &[0.0; 6]).is_err());
    assert!(l.mixer().is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Raising any one agent's utility never lowers the mixed value.
    #[test]
    fn qmix_is_monotone(seed in any::<u64>(), n in 1usize..5, agent in 0usize..4, bump in 0.0f64..5.0) {
        let agent = agent % n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixer = QmixMixer::new(n, 6, 8, 16, &mut rng).unwrap();
        let state: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut raised = q.clone();
        raised[agent] += bump;
        prop_assert!(mixer.q_tot(&raised, &state).unwrap() >= mixer.q_tot(&q, &state).unwrap());
    }

    /// Batched mixing agrees bit for bit with row-by-row mixing.
    #[test]
    fn qmix_batch_matches_rows(seed in any::<u64>(), n in 1usize..4, rows in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixer = QmixMixer::new(n, 5, 4, 8, &mut rng).unwrap();
        let q: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let s: Vec<f64> = (0..rows * 5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let batch = mixer.q_tot_batch(&q, &s, rows).unwrap();
        for r in 0..rows {
            prop_assert_eq!(batch[r], mixer.q_tot(&q[r * n..(r + 1) * n], &s[r * 5..(r + 1) * 5]).unwrap());
        }
    }
}
