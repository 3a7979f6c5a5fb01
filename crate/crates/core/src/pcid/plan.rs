//! Planning on the learned latent model: reachability, reward estimation
//! from the cover, and finite-horizon value iteration.

use std::sync::Arc;

use rayon::prelude::*;

use super::{CoverPolicy, DecodedPolicy, LearnedModel, PcidError};
use crate::bmdp::{
    reach_dp, sample_trajectory, ActionSequencePolicy, BmdpModel, ConcatPolicy, ContextPolicy,
    LatentPolicy, TransitionTable,
};
use crate::rng::SeedStream;

/// Backward-induction reaching policy on a chain of estimated tables;
/// `tables[l]` maps level `l + 1` to `l + 2`, `target` indexes the last
/// level. Returns the policy and its modeled reaching probability from the
/// start state.
pub fn plan_reach(tables: &[&TransitionTable], target: usize) -> (LatentPolicy, f64) {
    reach_dp(tables, target)
}

/// Reward estimates over learned states, `values[l - 1][state][action]` for
/// action levels `1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimate {
    pub values: Vec<Vec<Vec<f64>>>,
    /// Episodes spent per (level, state, action) entry.
    pub episodes: Vec<Vec<Vec<u64>>>,
}

/// Estimate per-(state, action) expected rewards by driving each cover
/// policy to its state and playing each action. An episode counts toward
/// an entry only when the visited context decodes to the intended state;
/// collection stops at `n_per_pair` counted visits or at a cap of ten times
/// that many episodes, whichever comes first.
pub fn estimate_rewards(
    env: &BmdpModel,
    learned: &LearnedModel,
    n_per_pair: usize,
    seed: u64,
) -> Result<RewardEstimate, PcidError> {
    if env.rewards.is_none() {
        return Err(PcidError::MissingReward { level: 0 });
    }
    let seeds = SeedStream::new(seed);
    let cap = 10 * n_per_pair;
    let k = env.num_actions;

    // Reserve a disjoint stream range per (level, state, action) so the
    // pairs can be collected in parallel yet reproducibly.
    let mut jobs = Vec::new();
    for level in 1..=env.horizon {
        for state in 0..learned.states_at(level) {
            for action in 0..k {
                jobs.push((level, state, action));
            }
        }
    }

    let results: Vec<(usize, usize, usize, f64, u64, usize)> = jobs
        .par_iter()
        .enumerate()
        .map(|(rank, &(level, state, action))| {
            let base = (rank * cap) as u64;
            let policy = learned.context_policy(level, state);
            let extended = ConcatPolicy::new(policy, action, env.horizon)
                .expect("cover policies leave room for one more action");
            let mut total = 0.0;
            let mut visits = 0usize;
            let mut used = 0u64;
            for i in 0..cap {
                used += 1;
                let mut rng = seeds.episode_rng(base + i as u64);
                let t = sample_trajectory(env, &extended, level, &mut rng);
                let step = &t.steps[level - 1];
                let on_target = if level == 1 {
                    true
                } else {
                    learned.level(level).decoder.decode(&step.context) == Ok(state)
                };
                if on_target {
                    total += step.reward.expect("reward table checked above");
                    visits += 1;
                    if visits == n_per_pair {
                        break;
                    }
                }
            }
            (level, state, action, total, used, visits)
        })
        .collect();

    let mut values: Vec<Vec<Vec<f64>>> = (1..=env.horizon)
        .map(|l| vec![vec![0.0; k]; learned.states_at(l)])
        .collect();
    let mut episodes: Vec<Vec<Vec<u64>>> = (1..=env.horizon)
        .map(|l| vec![vec![0; k]; learned.states_at(l)])
        .collect();
    for (level, state, action, total, used, visits) in results {
        if visits < n_per_pair {
            return Err(PcidError::StateUnreached {
                level,
                state,
                visits,
            });
        }
        values[level - 1][state][action] = total / visits as f64;
        episodes[level - 1][state][action] = used;
    }
    Ok(RewardEstimate { values, episodes })
}

/// Finite-horizon value iteration on the learned model with the given
/// reward estimates. Returns the greedy policy (an action sequence when the
/// cover is made of sequences and the learned dynamics are deterministic,
/// a decoder-composed policy otherwise) and the modeled value of the start
/// state.
pub fn plan_reward(
    learned: &LearnedModel,
    rewards: &[Vec<Vec<f64>>],
) -> Result<(Arc<dyn ContextPolicy>, f64), PcidError> {
    for level in 1..=learned.horizon {
        let ok = rewards
            .get(level - 1)
            .map(|per_state| {
                per_state.len() == learned.states_at(level)
                    && per_state.iter().all(|r| r.len() == learned.num_actions)
            })
            .unwrap_or(false);
        if !ok {
            return Err(PcidError::MissingReward { level });
        }
    }

    let mut value = vec![0.0; learned.states_at(learned.horizon + 1)];
    let mut actions: Vec<Vec<usize>> = vec![Vec::new(); learned.horizon];
    for level in (1..=learned.horizon).rev() {
        let table = &learned.level(level + 1).transitions;
        let n = learned.states_at(level);
        let mut level_actions = Vec::with_capacity(n);
        let mut level_value = Vec::with_capacity(n);
        for s in 0..n {
            let mut best_a = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for a in 0..learned.num_actions {
                let v = rewards[level - 1][s][a]
                    + table[s][a]
                        .iter()
                        .zip(&value)
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                if v > best_v {
                    best_v = v;
                    best_a = a;
                }
            }
            level_actions.push(best_a);
            level_value.push(best_v);
        }
        actions[level - 1] = level_actions;
        value = level_value;
    }
    let start_value = value[0];
    let latent = LatentPolicy::new(actions);

    let sequences_only = learned.levels.iter().all(|l| {
        l.policies
            .iter()
            .all(|p| matches!(p, CoverPolicy::Sequence { .. }))
    });
    let deterministic_rows = learned.levels.iter().all(|l| {
        l.transitions
            .iter()
            .flatten()
            .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    });
    let policy: Arc<dyn ContextPolicy> = if sequences_only && deterministic_rows {
        // Unroll the greedy policy along the deterministic learned chain.
        let mut state = 0usize;
        let mut sequence = Vec::with_capacity(learned.horizon);
        for level in 1..=learned.horizon {
            let a = latent
                .action(level, state)
                .expect("policy covers the horizon");
            sequence.push(a);
            let row = &learned.level(level + 1).transitions[state][a];
            state = row.iter().position(|&p| p == 1.0).unwrap_or(0);
        }
        Arc::new(ActionSequencePolicy::new(sequence))
    } else {
        Arc::new(DecodedPolicy {
            decoders: learned.levels[..learned.horizon - 1]
                .iter()
                .map(|l| l.decoder.clone())
                .collect(),
            latent,
        })
    };
    Ok((policy, start_value))
}
