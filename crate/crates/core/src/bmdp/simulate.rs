//! Trajectory simulation.
//!
//! An episode visits levels `1..=h+1`: at each of the first `h` levels the
//! environment emits a context, the policy (or the uniform default past the
//! policy's horizon) picks an action, and the state advances; the terminal
//! state's context is also emitted. True state ids are recorded for
//! diagnostics only.

use rand::Rng;
use rayon::prelude::*;

use super::policy::{ContextPolicy, PolicyMixture};
use super::BmdpModel;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    /// True latent state id at this level (diagnostic only).
    pub state: usize,
    pub context: Vec<f64>,
    pub action: usize,
    /// Observed reward, present iff the model carries a reward table.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// State and context at level `steps.len() + 1`.
    pub final_state: usize,
    pub final_context: Vec<f64>,
}

impl Trajectory {
    /// Context observed at a 1-indexed level `<= steps + 1`.
    pub fn context_at(&self, level: usize) -> &[f64] {
        if level == self.steps.len() + 1 {
            &self.final_context
        } else {
            &self.steps[level - 1].context
        }
    }
}

fn draw_categorical(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    for (i, &p) in row.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return i;
        }
    }
    row.len() - 1
}

/// Run one episode for `action_steps <= horizon` steps.
pub fn sample_trajectory(
    model: &BmdpModel,
    policy: &dyn ContextPolicy,
    action_steps: usize,
    rng: &mut impl Rng,
) -> Trajectory {
    assert!(
        action_steps <= model.horizon,
        "requested {action_steps} action steps on a horizon-{} model",
        model.horizon
    );
    let mut state = 0usize;
    let mut steps = Vec::with_capacity(action_steps);
    for level in 1..=action_steps {
        let context = model.emitter.sample(level, state, rng);
        let action = policy
            .action(level, &context)
            .unwrap_or_else(|| rng.random_range(0..model.num_actions));
        let reward = model
            .rewards
            .as_ref()
            .map(|rt| rt.observe(level, state, action, rng));
        let next = draw_categorical(&model.transitions[level - 1][state][action], rng);
        steps.push(TrajectoryStep {
            state,
            context,
            action,
            reward,
        });
        state = next;
    }
    let final_context = model.emitter.sample(action_steps + 1, state, rng);
    Trajectory {
        steps,
        final_state: state,
        final_context,
    }
}

/// Draw one component from the mixture, then follow it for the episode.
pub fn sample_trajectory_mixture(
    model: &BmdpModel,
    mixture: &PolicyMixture,
    action_steps: usize,
    rng: &mut impl Rng,
) -> Trajectory {
    let policy = mixture.sample(rng);
    sample_trajectory(model, policy.as_ref(), action_steps, rng)
}

/// Policy argument for batch collection.
#[derive(Clone, Copy)]
pub enum BatchPolicy<'a> {
    Single(&'a dyn ContextPolicy),
    Mixture(&'a PolicyMixture),
}

/// Collect `count` episodes in parallel. Episode `first_episode + i` draws
/// from its own RNG stream, so the batch is reproducible for any worker
/// count.
pub fn sample_batch(
    model: &BmdpModel,
    policy: BatchPolicy<'_>,
    action_steps: usize,
    seeds: SeedStream,
    first_episode: u64,
    count: usize,
) -> Vec<Trajectory> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.episode_rng(first_episode + i as u64);
            match policy {
                BatchPolicy::Single(p) => sample_trajectory(model, p, action_steps, &mut rng),
                BatchPolicy::Mixture(m) => {
                    sample_trajectory_mixture(model, m, action_steps, &mut rng)
                }
            }
        })
        .collect()
}
