//! Diagnostics, baselines, and the experiment runner.

mod diag;
mod experiment;
mod hungarian;
mod qlearning;

pub use diag::{
    cover_quality, diagnose, match_states, transition_error, DiagError, DiagOptions, LevelReport,
    MatchResult, RunReport, StateCoverReport,
};
pub use experiment::{
    percentile, run_experiment, AlgorithmConfig, ExperimentConfig, ExperimentOutcome,
    ExperimentSummary, MetricRow, QuantileSummary, RewardPlanConfig,
};
pub use hungarian::min_cost_assignment;
pub use qlearning::{
    run_q_learning_baseline, ObservationMode, QLearningConfig, RewardCurve, REWARD_BLOCK,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("environment has no reward table")]
    MissingReward,
    #[error("bad experiment config: {0}")]
    BadConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
