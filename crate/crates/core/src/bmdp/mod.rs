//! Ground-truth layered latent-state MDP with rich observations.
//!
//! The environment has `horizon` action steps and `horizon + 1` levels of
//! hidden states (levels are 1-indexed; level 1 holds the single start
//! state). At level `h` the hidden state emits a context vector in `R^d`,
//! the agent picks one of `num_actions` actions, and the state transitions
//! to level `h + 1`. Contexts carry their generating state as a
//! diagnostic-only tag: emission supports are disjoint across states, so a
//! perfect decoding function exists, but learning algorithms never read the
//! tag.

mod dp;
mod policy;
mod simulate;

pub use dp::{
    exact_reach_probability, exact_reach_uniform, max_expected_reward, max_reach_probability,
    occupancy, reach_dp, DpError,
};
pub use policy::{
    ActionSequencePolicy, ConcatPolicy, ContextPolicy, LatentPolicy, PolicyError, PolicyMixture,
    TrivialPolicy,
};
pub use simulate::{
    sample_batch, sample_trajectory, sample_trajectory_mixture, BatchPolicy, Trajectory,
    TrajectoryStep,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-level transition table: `table[s][a]` is a distribution over the
/// next level's states.
pub type TransitionTable = Vec<Vec<Vec<f64>>>;

/// How contexts are generated from hidden states.
///
/// Both variants fix a per-state pattern on the leading coordinates; they
/// differ in how the remaining coordinates (and noise) are filled in. The
/// patterns within a level are distinct, which gives the disjoint emission
/// supports required of a block MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case")]
pub enum ObservationProcess {
    /// Leading coordinates fixed to `patterns[level-1][state]`, remaining
    /// coordinates i.i.d. Bernoulli(0.5).
    PatternBernoulli {
        dim: usize,
        patterns: Vec<Vec<Vec<f64>>>,
    },
    /// Leading coordinates fixed to the pattern (rest zero), then additive
    /// `N(0, sigma^2)` noise on every coordinate.
    PatternGaussian {
        dim: usize,
        sigma: f64,
        patterns: Vec<Vec<Vec<f64>>>,
    },
}

impl ObservationProcess {
    pub fn dim(&self) -> usize {
        match self {
            Self::PatternBernoulli { dim, .. } | Self::PatternGaussian { dim, .. } => *dim,
        }
    }

    fn patterns(&self) -> &Vec<Vec<Vec<f64>>> {
        match self {
            Self::PatternBernoulli { patterns, .. } | Self::PatternGaussian { patterns, .. } => {
                patterns
            }
        }
    }

    /// Draw a context for `state` at the 1-indexed `level`.
    pub fn sample(&self, level: usize, state: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Self::PatternBernoulli { dim, patterns } => {
                let pat = &patterns[level - 1][state];
                let mut x = Vec::with_capacity(*dim);
                x.extend_from_slice(pat);
                while x.len() < *dim {
                    x.push(if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
                }
                x
            }
            Self::PatternGaussian {
                dim,
                sigma,
                patterns,
            } => {
                let pat = &patterns[level - 1][state];
                let mut x = vec![0.0; *dim];
                x[..pat.len()].copy_from_slice(pat);
                for v in &mut x {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sigma * z;
                }
                x
            }
        }
    }

    /// Nearest-pattern classification of a context. This inverts the block
    /// structure exactly for the Bernoulli process and with overwhelming
    /// probability for the Gaussian one; it is a cheating decoder for tests
    /// and baselines only.
    pub fn classify(&self, level: usize, context: &[f64]) -> usize {
        let pats = &self.patterns()[level - 1];
        let width = pats.iter().map(Vec::len).max().unwrap_or(0);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (s, pat) in pats.iter().enumerate() {
            let mut d = 0.0;
            for j in 0..width {
                let p = pat.get(j).copied().unwrap_or(0.0);
                let diff = context.get(j).copied().unwrap_or(0.0) - p;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        best
    }
}

/// How observed rewards are drawn from the expected-reward table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// The expectation itself is observed.
    Exact,
    /// A Bernoulli draw with the expectation as success probability
    /// (entries must lie in [0, 1]).
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    /// `expected[h-1][state][action]` for action levels `1..=horizon`.
    pub expected: Vec<Vec<Vec<f64>>>,
    pub kind: RewardKind,
}

impl RewardTable {
    pub fn observe(&self, level: usize, state: usize, action: usize, rng: &mut impl Rng) -> f64 {
        let mean = self.expected[level - 1][state][action];
        match self.kind {
            RewardKind::Exact => mean,
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A validated-on-demand block MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct BmdpModel {
    /// Number of action steps per episode.
    pub horizon: usize,
    pub num_actions: usize,
    /// State counts for levels `1..=horizon + 1`; level 1 has one state.
    pub states_per_level: Vec<usize>,
    /// `transitions[h-1][s][a]` is the distribution over level-(h+1) states.
    pub transitions: Vec<TransitionTable>,
    pub emitter: ObservationProcess,
    pub rewards: Option<RewardTable>,
}

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    NonStochasticRow {
        level: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeTransition {
        level: usize,
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    BadLevelStructure {
        reason: String,
    },
}

impl std::fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonStochasticRow {
                level,
                state,
                action,
                sum,
            } => write!(
                f,
                "transition row (level {level}, state {state}, action {action}) sums to {sum}"
            ),
            Self::NegativeTransition {
                level,
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "negative transition p(level {level}, state {state}, action {action} -> {next_state}) = {value}"
            ),
            Self::BadLevelStructure { reason } => write!(f, "bad level structure: {reason}"),
        }
    }
}

/// Error report listing every violated invariant.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid model: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidModel {
    pub violations: Vec<ModelViolation>,
}

impl BmdpModel {
    pub fn num_levels(&self) -> usize {
        self.horizon + 1
    }

    /// Number of states at a 1-indexed level.
    pub fn states_at(&self, level: usize) -> usize {
        self.states_per_level[level - 1]
    }

    pub fn context_dim(&self) -> usize {
        self.emitter.dim()
    }

    /// Transition table out of a 1-indexed level (`1..=horizon`).
    pub fn table_at(&self, level: usize) -> &TransitionTable {
        &self.transitions[level - 1]
    }

    /// Check every structural invariant, returning `self` when all hold and
    /// otherwise an error listing every violation.
    pub fn validated(self) -> Result<Self, InvalidModel> {
        match self.validate() {
            Ok(()) => Ok(self),
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<(), InvalidModel> {
        let mut violations = Vec::new();
        let mut structure = |reason: String| {
            violations.push(ModelViolation::BadLevelStructure { reason });
        };

        if self.num_actions == 0 {
            structure("num_actions must be positive".into());
        }
        if self.states_per_level.len() != self.horizon + 1 {
            structure(format!(
                "expected {} level sizes, found {}",
                self.horizon + 1,
                self.states_per_level.len()
            ));
        }
        if self.states_per_level.first() != Some(&1) {
            structure("level 1 must contain exactly one state".into());
        }
        if self.states_per_level.contains(&0) {
            structure("every level must contain at least one state".into());
        }
        if self.transitions.len() != self.horizon {
            structure(format!(
                "expected {} transition tables, found {}",
                self.horizon,
                self.transitions.len()
            ));
        }

        let patterns = self.emitter.patterns();
        if patterns.len() != self.states_per_level.len() {
            structure(format!(
                "emitter covers {} levels, model has {}",
                patterns.len(),
                self.states_per_level.len()
            ));
        } else {
            for (l, (pats, &n)) in patterns.iter().zip(&self.states_per_level).enumerate() {
                if pats.len() != n {
                    structure(format!(
                        "emitter level {} covers {} states of {}",
                        l + 1,
                        pats.len(),
                        n
                    ));
                } else {
                    if pats.iter().any(|p| p.len() > self.emitter.dim()) {
                        structure(format!("emitter pattern wider than dim at level {}", l + 1));
                    }
                    for (i, a) in pats.iter().enumerate() {
                        for b in pats.iter().skip(i + 1) {
                            if a == b {
                                structure(format!(
                                    "duplicate emission patterns at level {}",
                                    l + 1
                                ));
                            }
                        }
                    }
                }
            }
        }

        if let Some(rt) = &self.rewards {
            if rt.expected.len() != self.horizon {
                structure(format!(
                    "reward table covers {} levels, expected {}",
                    rt.expected.len(),
                    self.horizon
                ));
            }
            if rt.kind == RewardKind::Bernoulli
                && rt
                    .expected
                    .iter()
                    .flatten()
                    .flatten()
                    .any(|&r| !(0.0..=1.0).contains(&r))
            {
                structure("bernoulli rewards must lie in [0, 1]".into());
            }
        }

        for (h0, table) in self.transitions.iter().enumerate() {
            let level = h0 + 1;
            let here = self.states_per_level.get(h0).copied().unwrap_or(0);
            let next = self.states_per_level.get(h0 + 1).copied().unwrap_or(0);
            if table.len() != here {
                violations.push(ModelViolation::BadLevelStructure {
                    reason: format!(
                        "level {level} table has {} state rows, expected {here}",
                        table.len()
                    ),
                });
                continue;
            }
            for (s, per_action) in table.iter().enumerate() {
                if per_action.len() != self.num_actions {
                    violations.push(ModelViolation::BadLevelStructure {
                        reason: format!(
                            "level {level} state {s} has {} action rows",
                            per_action.len()
                        ),
                    });
                    continue;
                }
                for (a, row) in per_action.iter().enumerate() {
                    if row.len() != next {
                        violations.push(ModelViolation::BadLevelStructure {
                            reason: format!(
                                "level {level} row ({s}, {a}) has {} entries, expected {next}",
                                row.len()
                            ),
                        });
                        continue;
                    }
                    for (s2, &p) in row.iter().enumerate() {
                        if p < 0.0 || !p.is_finite() {
                            violations.push(ModelViolation::NegativeTransition {
                                level,
                                state: s,
                                action: a,
                                next_state: s2,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        violations.push(ModelViolation::NonStochasticRow {
                            level,
                            state: s,
                            action: a,
                            sum,
                        });
                    }
                }
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(InvalidModel { violations })
        }
    }
}

// ---------------------------------------------------------------------------
// Model description file

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("level {level} has {found} transition rows, expected {expected}")]
    RowCount {
        level: usize,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
}

#[derive(Serialize, Deserialize)]
struct LevelFile {
    num_states: usize,
    /// Row-major (state-major, then action) probability rows out of this
    /// level; empty for the last level.
    transitions: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    horizon: usize,
    num_actions: usize,
    levels: Vec<LevelFile>,
    emitter: ObservationProcess,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rewards: Option<RewardTable>,
}

impl BmdpModel {
    /// Serialize to the model description format: levels carry row-major
    /// probability rows; floats round-trip bit-exactly.
    pub fn to_json(&self) -> String {
        let levels = self
            .states_per_level
            .iter()
            .enumerate()
            .map(|(h0, &n)| LevelFile {
                num_states: n,
                transitions: match self.transitions.get(h0) {
                    Some(table) => table.iter().flatten().cloned().collect(),
                    None => Vec::new(),
                },
            })
            .collect();
        let file = ModelFile {
            horizon: self.horizon,
            num_actions: self.num_actions,
            levels,
            emitter: self.emitter.clone(),
            rewards: self.rewards.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let states_per_level: Vec<usize> = file.levels.iter().map(|l| l.num_states).collect();
        let mut transitions = Vec::new();
        for (h0, level) in file.levels.iter().enumerate() {
            if h0 + 1 == file.levels.len() {
                if !level.transitions.is_empty() {
                    return Err(ModelFileError::RowCount {
                        level: h0 + 1,
                        found: level.transitions.len(),
                        expected: 0,
                    });
                }
                break;
            }
            let expected = level.num_states * file.num_actions;
            if level.transitions.len() != expected {
                return Err(ModelFileError::RowCount {
                    level: h0 + 1,
                    found: level.transitions.len(),
                    expected,
                });
            }
            let table: TransitionTable = level
                .transitions
                .chunks(file.num_actions)
                .map(|rows| rows.to_vec())
                .collect();
            transitions.push(table);
        }
        let model = BmdpModel {
            horizon: file.horizon,
            num_actions: file.num_actions,
            states_per_level,
            transitions,
            emitter: file.emitter,
            rewards: file.rewards,
        };
        Ok(model.validated()?)
    }
}
