//! Policy-cover learning by inductive decoding.
//!
//! Both runners proceed level by level. A uniform mixture over the previous
//! cover, extended by a uniform action, generates the data; contexts at the
//! new level are regressed onto one-hot (previous state, action) targets;
//! the predicted embeddings are clustered into learned states; and the
//! cover for the new level comes from dynamic programming on the estimated
//! transitions (stochastic case) or directly from the generating action
//! sequences (deterministic case).

mod deterministic;
mod plan;
mod stochastic;

pub use deterministic::run_pcid_deterministic;
pub use plan::{estimate_rewards, plan_reach, plan_reward, RewardEstimate};
pub use stochastic::{estimate_transitions, run_pcid_stochastic};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmdp::{
    ActionSequencePolicy, ContextPolicy, LatentPolicy, PolicyError, TransitionTable, TrivialPolicy,
};
use crate::clustering::{ClusterError, Decoder};
use crate::embedding::{EmbeddingError, ErmError};

#[derive(Debug, Error)]
pub enum PcidError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Erm(#[from] ErmError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("reward estimates missing for level {level}")]
    MissingReward { level: usize },
    #[error("cover policy for (level {level}, state {state}) produced only {visits} decoded visits within the episode cap")]
    StateUnreached {
        level: usize,
        state: usize,
        visits: usize,
    },
}

/// Sample sizes and clustering threshold for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcidConfig {
    /// Episodes per level for the regression step.
    pub n_regression: usize,
    /// Points per level for the clustering step.
    pub n_embedding: usize,
    /// Episodes per level for transition estimation (stochastic runner).
    pub n_transition: usize,
    /// Rollouts per (policy, action) pair for embedding averaging
    /// (deterministic runner).
    pub n_boost: usize,
    /// L1 clustering threshold.
    pub threshold: f64,
    /// Cap on states per level; clustering past the cap is recorded, not
    /// truncated.
    pub max_states: usize,
    /// Reuse the regression batch for clustering and transition estimation
    /// instead of collecting fresh batches.
    #[serde(default = "default_true")]
    pub reuse_samples: bool,
}

fn default_true() -> bool {
    true
}

impl PcidConfig {
    pub(crate) fn check(&self, deterministic: bool) -> Result<(), PcidError> {
        let mut required = vec![
            ("n_regression", self.n_regression),
            ("n_embedding", self.n_embedding),
            ("max_states", self.max_states),
        ];
        if deterministic {
            required.push(("n_boost", self.n_boost));
        } else {
            required.push(("n_transition", self.n_transition));
        }
        for (name, value) in required {
            if value == 0 {
                return Err(PcidError::BadConfig(format!("{name} must be positive")));
            }
        }
        if !self.threshold.is_finite() || self.threshold <= 0.0 {
            return Err(PcidError::BadConfig("threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Cover policy for one learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoverPolicy {
    /// Latent-state policy over learned ids, composed with the learned
    /// decoders at execution time.
    Decoded { latent: LatentPolicy },
    /// Fixed action sequence.
    Sequence { actions: Vec<usize> },
}

/// Everything learned for one level: decoder, transition rows into the
/// level, and one cover policy per learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedLevel {
    pub decoder: Decoder,
    /// `transitions[prev][a]` is the estimated distribution over this
    /// level's learned states.
    pub transitions: TransitionTable,
    pub policies: Vec<CoverPolicy>,
    /// Clustering produced more than `max_states` clusters.
    pub cap_exceeded: bool,
}

impl LearnedLevel {
    pub fn num_states(&self) -> usize {
        self.decoder.num_states()
    }
}

/// Output of a cover-learning run. `levels[i]` describes level `i + 2`;
/// level 1 is always the single start state with the trivial policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub horizon: usize,
    pub num_actions: usize,
    pub max_states: usize,
    pub levels: Vec<LearnedLevel>,
    pub episodes_used: u64,
}

impl LearnedModel {
    pub fn level(&self, level: usize) -> &LearnedLevel {
        &self.levels[level - 2]
    }

    pub fn states_at(&self, level: usize) -> usize {
        if level == 1 {
            1
        } else {
            self.level(level).num_states()
        }
    }

    /// Total cover size over levels 2 and deeper.
    pub fn cover_size(&self) -> usize {
        self.levels.iter().map(|l| l.policies.len()).sum()
    }

    pub fn any_cap_exceeded(&self) -> bool {
        self.levels.iter().any(|l| l.cap_exceeded)
    }

    /// Executable cover policy reaching a learned state.
    pub fn context_policy(&self, level: usize, state: usize) -> Arc<dyn ContextPolicy> {
        if level == 1 {
            return Arc::new(TrivialPolicy);
        }
        match &self.level(level).policies[state] {
            CoverPolicy::Sequence { actions } => {
                Arc::new(ActionSequencePolicy::new(actions.clone()))
            }
            CoverPolicy::Decoded { latent } => Arc::new(DecodedPolicy {
                decoders: self.levels[..level - 2]
                    .iter()
                    .map(|l| l.decoder.clone())
                    .collect(),
                latent: latent.clone(),
            }),
        }
    }

    /// All cover policies of one level.
    pub fn cover_at(&self, level: usize) -> Vec<Arc<dyn ContextPolicy>> {
        if level == 1 {
            vec![Arc::new(TrivialPolicy)]
        } else {
            (0..self.states_at(level))
                .map(|s| self.context_policy(level, s))
                .collect()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("learned model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Latent policy over learned ids composed with per-level decoders.
#[derive(Debug, Clone)]
pub struct DecodedPolicy {
    /// `decoders[i]` decodes contexts at level `i + 2`.
    pub decoders: Vec<Decoder>,
    pub latent: LatentPolicy,
}

impl ContextPolicy for DecodedPolicy {
    fn steps(&self) -> usize {
        self.latent.steps()
    }

    fn action(&self, level: usize, context: &[f64]) -> Option<usize> {
        if level > self.latent.steps() {
            return None;
        }
        let state = if level == 1 {
            0
        } else {
            self.decoders.get(level - 2)?.decode(context).ok()?
        };
        self.latent.action(level, state)
    }
}
