//! Exact dynamic-programming oracles on transition tables.
//!
//! `reach_dp` is the backward-induction planner shared by the learner
//! (estimated tables) and the diagnostics (true tables): value 1 at the
//! target, 0 elsewhere, then per-level argmax of the one-step lookahead,
//! with ties broken toward the lowest action id. Forward occupancy
//! propagation supplies exact reaching probabilities for fixed policies.

use thiserror::Error;

use super::policy::LatentPolicy;
use super::{BmdpModel, TransitionTable};

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("policy is undefined at level {level}, state {state}")]
    UndefinedPolicyState { level: usize, state: usize },
    #[error("model has no reward table")]
    MissingReward,
}

/// Forward occupancy distributions over levels `1..=upto_level`, following
/// the latent policy where defined and averaging uniformly over actions
/// past its horizon.
pub fn occupancy(
    model: &BmdpModel,
    policy: Option<&LatentPolicy>,
    upto_level: usize,
) -> Result<Vec<Vec<f64>>, DpError> {
    let mut levels = Vec::with_capacity(upto_level);
    let mut occ = vec![1.0];
    levels.push(occ.clone());
    for level in 1..upto_level {
        let table = model.table_at(level);
        let next_n = model.states_at(level + 1);
        let mut next = vec![0.0; next_n];
        for (s, &mass) in occ.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let defined = policy.is_some_and(|p| level <= p.steps());
            if defined {
                let action = policy
                    .and_then(|p| p.action(level, s))
                    .ok_or(DpError::UndefinedPolicyState { level, state: s })?;
                for (s2, &p) in table[s][action].iter().enumerate() {
                    next[s2] += mass * p;
                }
            } else {
                let k = model.num_actions as f64;
                for row in &table[s] {
                    for (s2, &p) in row.iter().enumerate() {
                        next[s2] += mass * p / k;
                    }
                }
            }
        }
        occ = next;
        levels.push(occ.clone());
    }
    Ok(levels)
}

/// Exact probability that `policy` (defined on levels `1..level`) is in
/// `state` at the 1-indexed `level`.
pub fn exact_reach_probability(
    model: &BmdpModel,
    policy: &LatentPolicy,
    level: usize,
    state: usize,
) -> Result<f64, DpError> {
    if policy.steps() + 1 < level {
        return Err(DpError::UndefinedPolicyState {
            level: policy.steps() + 1,
            state: 0,
        });
    }
    let levels = occupancy(model, Some(policy), level)?;
    Ok(levels[level - 1][state])
}

/// Reach probability of the all-uniform policy.
pub fn exact_reach_uniform(model: &BmdpModel, level: usize, state: usize) -> f64 {
    let levels = occupancy(model, None, level).expect("uniform occupancy cannot fail");
    levels[level - 1][state]
}

/// Backward-induction planner over a chain of transition tables.
///
/// `tables[l]` maps level `l + 1` to level `l + 2`; the target indexes the
/// states of the last level. Returns the per-level state-to-action maps and
/// the value at the level-1 start state. A target with no incoming
/// probability planwise yields value 0 (ties go to action 0).
pub fn reach_dp(tables: &[&TransitionTable], target: usize) -> (LatentPolicy, f64) {
    let last_width = match tables.last() {
        Some(t) => t[0][0].len(),
        None => return (LatentPolicy::new(Vec::new()), 1.0),
    };
    let mut value = vec![0.0; last_width];
    value[target] = 1.0;
    let mut actions = vec![Vec::new(); tables.len()];
    for (l, table) in tables.iter().enumerate().rev() {
        let mut level_actions = Vec::with_capacity(table.len());
        let mut level_value = Vec::with_capacity(table.len());
        for rows in table.iter() {
            let mut best_a = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (a, row) in rows.iter().enumerate() {
                let v: f64 = row.iter().zip(&value).map(|(p, v)| p * v).sum();
                if v > best_v {
                    best_v = v;
                    best_a = a;
                }
            }
            level_actions.push(best_a);
            level_value.push(best_v);
        }
        actions[l] = level_actions;
        value = level_value;
    }
    (LatentPolicy::new(actions), value[0])
}

/// Maximum reaching probability of a state, and an attaining latent policy,
/// via backward induction on the true transition tensor.
pub fn max_reach_probability(model: &BmdpModel, level: usize, state: usize) -> (f64, LatentPolicy) {
    let tables: Vec<&TransitionTable> = model.transitions[..level - 1].iter().collect();
    let (policy, value) = reach_dp(&tables, state);
    (value, policy)
}

/// Optimal expected total reward over the full horizon (value iteration on
/// the true model), available when the model carries rewards.
pub fn max_expected_reward(model: &BmdpModel) -> Result<f64, DpError> {
    let rewards = model.rewards.as_ref().ok_or(DpError::MissingReward)?;
    let mut value = vec![0.0; model.states_at(model.num_levels())];
    for level in (1..=model.horizon).rev() {
        let table = model.table_at(level);
        let mut level_value = Vec::with_capacity(model.states_at(level));
        for s in 0..model.states_at(level) {
            let best = (0..model.num_actions)
                .map(|a| {
                    rewards.expected[level - 1][s][a]
                        + table[s][a]
                            .iter()
                            .zip(&value)
                            .map(|(p, v)| p * v)
                            .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            level_value.push(best);
        }
        value = level_value;
    }
    Ok(value[0])
}
