//! Policies over contexts and over latent states, and their algebra.
//!
//! An `h`-step context policy maps (level, context) to an action for levels
//! `1..=h`; past its horizon the simulator falls back to the uniform-random
//! default. Mixtures draw one component per episode and follow it
//! throughout. `concat` extends a policy by one fixed action.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("extending a {steps}-step policy exceeds horizon {horizon}")]
    HorizonExceeded { steps: usize, horizon: usize },
    #[error("mixture weights must be nonnegative with positive sum")]
    BadWeights,
}

/// Deterministic decision rule from contexts to actions.
pub trait ContextPolicy: Send + Sync {
    /// Number of steps for which this policy defines actions.
    fn steps(&self) -> usize;

    /// Action at a 1-indexed level, or `None` past the defined horizon
    /// (the simulator then plays the uniform default).
    fn action(&self, level: usize, context: &[f64]) -> Option<usize>;
}

/// The 0-step policy: every step falls back to the uniform default.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialPolicy;

impl ContextPolicy for TrivialPolicy {
    fn steps(&self) -> usize {
        0
    }

    fn action(&self, _level: usize, _context: &[f64]) -> Option<usize> {
        None
    }
}

/// A fixed, context-independent action sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSequencePolicy {
    pub actions: Vec<usize>,
}

impl ActionSequencePolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions }
    }
}

impl ContextPolicy for ActionSequencePolicy {
    fn steps(&self) -> usize {
        self.actions.len()
    }

    fn action(&self, level: usize, _context: &[f64]) -> Option<usize> {
        self.actions.get(level - 1).copied()
    }
}

/// `base` for its own horizon, then one fixed action.
#[derive(Clone)]
pub struct ConcatPolicy {
    pub base: Arc<dyn ContextPolicy>,
    pub action: usize,
}

impl ConcatPolicy {
    pub fn new(
        base: Arc<dyn ContextPolicy>,
        action: usize,
        horizon: usize,
    ) -> Result<Self, PolicyError> {
        let steps = base.steps();
        if steps >= horizon {
            return Err(PolicyError::HorizonExceeded { steps, horizon });
        }
        Ok(Self { base, action })
    }
}

impl ContextPolicy for ConcatPolicy {
    fn steps(&self) -> usize {
        self.base.steps() + 1
    }

    fn action(&self, level: usize, context: &[f64]) -> Option<usize> {
        if level <= self.base.steps() {
            self.base.action(level, context)
        } else if level == self.base.steps() + 1 {
            Some(self.action)
        } else {
            None
        }
    }
}

/// Map from latent-state ids to actions, one map per level it covers.
///
/// `actions[l - 1][s]` is the action at level `l` in state `s`; the ids are
/// either true-model ids or learned ids depending on the context of use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPolicy {
    pub actions: Vec<Vec<usize>>,
}

impl LatentPolicy {
    pub fn new(actions: Vec<Vec<usize>>) -> Self {
        Self { actions }
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, level: usize, state: usize) -> Option<usize> {
        self.actions.get(level - 1)?.get(state).copied()
    }

    /// Constant-per-level policy equivalent to a fixed action sequence over
    /// states of the given level widths.
    pub fn from_sequence(sequence: &[usize], widths: &[usize]) -> Self {
        let actions = sequence
            .iter()
            .zip(widths)
            .map(|(&a, &w)| vec![a; w])
            .collect();
        Self { actions }
    }
}

/// Finite mixture of context policies; sampling draws one component per
/// episode and follows it throughout.
#[derive(Clone)]
pub struct PolicyMixture {
    components: Vec<(Arc<dyn ContextPolicy>, f64)>,
}

impl PolicyMixture {
    /// Weights are normalized to sum to one.
    pub fn new(components: Vec<(Arc<dyn ContextPolicy>, f64)>) -> Result<Self, PolicyError> {
        if components.is_empty() || components.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) {
            return Err(PolicyError::BadWeights);
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(PolicyError::BadWeights);
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(p, w)| (p, w / total))
                .collect(),
        })
    }

    pub fn uniform(policies: Vec<Arc<dyn ContextPolicy>>) -> Self {
        let n = policies.len();
        Self::new(policies.into_iter().map(|p| (p, 1.0 / n as f64)).collect())
            .expect("uniform mixture over a nonempty set is well formed")
    }

    pub fn components(&self) -> &[(Arc<dyn ContextPolicy>, f64)] {
        &self.components
    }

    pub fn max_steps(&self) -> usize {
        self.components
            .iter()
            .map(|(p, _)| p.steps())
            .max()
            .unwrap_or(0)
    }

    /// Mixture of `component ⊙ a` over every component and every action,
    /// with product weights.
    pub fn concat_uniform_actions(
        &self,
        num_actions: usize,
        horizon: usize,
    ) -> Result<PolicyMixture, PolicyError> {
        let mut components = Vec::with_capacity(self.components.len() * num_actions);
        for (policy, weight) in &self.components {
            for action in 0..num_actions {
                let extended = ConcatPolicy::new(Arc::clone(policy), action, horizon)?;
                components.push((
                    Arc::new(extended) as Arc<dyn ContextPolicy>,
                    weight / num_actions as f64,
                ));
            }
        }
        PolicyMixture::new(components)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> &Arc<dyn ContextPolicy> {
        let u: f64 = rng.random();
        let mut cdf = 0.0;
        for (policy, weight) in &self.components {
            cdf += weight;
            if u < cdf {
                return policy;
            }
        }
        &self.components.last().expect("mixture is nonempty").0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_of_trivial_is_constant_one_step() {
        let p = ConcatPolicy::new(Arc::new(TrivialPolicy), 1, 5).unwrap();
        assert_eq!(p.steps(), 1);
        assert_eq!(p.action(1, &[0.0]), Some(1));
        assert_eq!(p.action(2, &[0.0]), None);
    }

    #[test]
    fn concat_plays_the_fixed_action_at_its_last_level() {
        let base = Arc::new(ActionSequencePolicy::new(vec![0, 1]));
        let p = ConcatPolicy::new(base, 3, 5).unwrap();
        for context in [vec![0.0], vec![100.0, -3.0]] {
            assert_eq!(p.action(3, &context), Some(3));
        }
    }

    #[test]
    fn concat_agrees_with_base_on_earlier_levels() {
        let base: Arc<dyn ContextPolicy> = Arc::new(ActionSequencePolicy::new(vec![2, 0, 1]));
        let p = ConcatPolicy::new(Arc::clone(&base), 1, 9).unwrap();
        for level in 1..=3 {
            assert_eq!(p.action(level, &[]), base.action(level, &[]));
        }
    }

    #[test]
    fn concat_rejects_horizon_overflow() {
        let base = Arc::new(ActionSequencePolicy::new(vec![0, 0, 0]));
        match ConcatPolicy::new(base, 1, 3) {
            Err(err) => assert_eq!(
                err,
                PolicyError::HorizonExceeded {
                    steps: 3,
                    horizon: 3
                }
            ),
            Ok(_) => panic!("extension past the horizon must fail"),
        }
    }

    #[test]
    fn mixture_concat_uniform_has_product_weights() {
        let mixture = PolicyMixture::new(vec![
            (Arc::new(TrivialPolicy) as Arc<dyn ContextPolicy>, 0.25),
            (
                Arc::new(ActionSequencePolicy::new(vec![1])) as Arc<dyn ContextPolicy>,
                0.75,
            ),
        ])
        .unwrap();
        let extended = mixture.concat_uniform_actions(3, 10).unwrap();
        assert_eq!(extended.components().len(), 6);
        let total: f64 = extended.components().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((extended.components()[0].1 - 0.25 / 3.0).abs() < 1e-12);
        assert!((extended.components()[3].1 - 0.75 / 3.0).abs() < 1e-12);
    }
}
