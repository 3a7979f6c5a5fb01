//! Replicated experiment runner with CSV output.
//!
//! Each replicate runs the configured algorithm under its own derived seed
//! and contributes metric rows (replicate, seed, level-or-episode, metric,
//! value). Rows are grouped into one CSV file per metric, and a summary
//! JSON reports median and 10th/90th percentiles per metric and index.
//! Outputs contain nothing nondeterministic, so a rerun with the same
//! config and seed is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diag::{diagnose, DiagOptions, RunReport};
use super::qlearning::{run_q_learning_baseline, ObservationMode, QLearningConfig, REWARD_BLOCK};
use super::HarnessError;
use crate::bmdp::{max_expected_reward, sample_trajectory, BmdpModel};
use crate::envs::EnvPreset;
use crate::pcid::{
    estimate_rewards, plan_reward, run_pcid_deterministic, run_pcid_stochastic, LearnedModel,
    PcidConfig,
};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPlanConfig {
    pub n_per_pair: usize,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AlgorithmConfig {
    PcidStochastic {
        pcid: PcidConfig,
        #[serde(default)]
        diag: Option<DiagOptions>,
        #[serde(default)]
        plan_rewards: Option<RewardPlanConfig>,
    },
    PcidDeterministic {
        pcid: PcidConfig,
        #[serde(default)]
        diag: Option<DiagOptions>,
        #[serde(default)]
        plan_rewards: Option<RewardPlanConfig>,
    },
    QLearningLatent {
        q: QLearningConfig,
    },
    QLearningDecoded {
        q: QLearningConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvPreset,
    pub algorithm: AlgorithmConfig,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub replicate: usize,
    pub seed: u64,
    /// Level for per-level metrics, episode for curves, 0 for overall.
    pub index: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub index: u64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentSummary {
    pub metrics: BTreeMap<String, Vec<QuantileSummary>>,
    /// Per-replicate failures (replicate, message); they do not abort the
    /// sweep.
    pub errors: Vec<(usize, String)>,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("percentiles need ordered values"));
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

struct ReplicateOutput {
    rows: Vec<MetricRow>,
    report: Option<RunReport>,
    learned: Option<LearnedModel>,
    error: Option<String>,
}

fn pcid_replicate(
    model: &BmdpModel,
    deterministic: bool,
    pcid: &PcidConfig,
    diag_options: DiagOptions,
    plan: Option<RewardPlanConfig>,
    replicate: usize,
    seed: u64,
) -> ReplicateOutput {
    let mut rows = Vec::new();
    let learn_clock = std::time::Instant::now();
    let run = if deterministic {
        run_pcid_deterministic(model, pcid, seed)
    } else {
        run_pcid_stochastic(model, pcid, seed)
    };
    let wall_clock = learn_clock.elapsed().as_secs_f64();
    let learned = match run {
        Ok(l) => l,
        Err(e) => {
            return ReplicateOutput {
                rows,
                report: None,
                learned: None,
                error: Some(e.to_string()),
            }
        }
    };
    let mut report = diagnose(
        model,
        &learned,
        diag_options,
        SeedStream::new(seed).child(1).seed(),
    );
    report.config = Some(*pcid);
    report.wall_clock_secs = Some(wall_clock);
    let mut push = |index: u64, metric: &str, value: f64| {
        rows.push(MetricRow {
            replicate,
            seed,
            index,
            metric: metric.to_string(),
            value,
        });
    };
    for level in &report.levels {
        let i = level.level as u64;
        push(i, "states_discovered", level.states_discovered as f64);
        let min_acc = level
            .decode_accuracy
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        push(i, "decode_accuracy_min", min_acc);
        if let Some(err) = level.transition_max_l1 {
            push(i, "transition_max_l1", err);
        }
        let max_gap = level
            .states
            .iter()
            .map(|s| s.gap)
            .fold(f64::NEG_INFINITY, f64::max);
        push(i, "cover_gap_max", max_gap);
    }
    push(0, "cover_size", report.cover_size as f64);
    push(0, "episodes_used", report.episodes_used as f64);

    let mut error = None;
    if let Some(plan_config) = plan {
        match estimate_rewards(model, &learned, plan_config.n_per_pair, seed ^ 0x5EED) {
            Ok(estimate) => match plan_reward(&learned, &estimate.values) {
                Ok((policy, value)) => {
                    push(0, "planned_value", value);
                    let stream = SeedStream::new(seed).child(2);
                    let mut total = 0.0;
                    let mut first_nonzero: Option<usize> = None;
                    for i in 0..plan_config.eval_episodes {
                        let mut rng = stream.episode_rng(i as u64);
                        let t = sample_trajectory(model, policy.as_ref(), model.horizon, &mut rng);
                        let r: f64 = t.steps.iter().filter_map(|s| s.reward).sum();
                        if r > 0.0 && first_nonzero.is_none() {
                            first_nonzero = Some(i + 1);
                        }
                        total += r;
                    }
                    push(
                        0,
                        "planned_policy_reward",
                        total / plan_config.eval_episodes as f64,
                    );
                    let episodes_to_reward = match first_nonzero {
                        Some(i) => learned.episodes_used as f64 + i as f64,
                        None => f64::MAX,
                    };
                    push(0, "episodes_to_first_reward", episodes_to_reward);
                }
                Err(e) => error = Some(e.to_string()),
            },
            Err(e) => error = Some(e.to_string()),
        }
    }
    ReplicateOutput {
        rows,
        report: Some(report),
        learned: Some(learned),
        error,
    }
}

fn qlearning_replicate(
    model: &BmdpModel,
    mode: ObservationMode,
    q: &QLearningConfig,
    replicate: usize,
    seed: u64,
) -> ReplicateOutput {
    let mut rows = Vec::new();
    match run_q_learning_baseline(model, mode, q, seed) {
        Ok(curve) => {
            for (i, avg) in curve.running_avg.iter().enumerate() {
                rows.push(MetricRow {
                    replicate,
                    seed,
                    index: ((i + 1) * REWARD_BLOCK) as u64,
                    metric: "running_avg_reward".to_string(),
                    value: *avg,
                });
            }
            // Censored runs report one block past the budget.
            let not_found = (curve.episodes + REWARD_BLOCK) as f64;
            rows.push(MetricRow {
                replicate,
                seed,
                index: 0,
                metric: "time_to_find".to_string(),
                value: curve.time_to_find().map_or(not_found, |e| e as f64),
            });
            if let Ok(v_star) = max_expected_reward(model) {
                rows.push(MetricRow {
                    replicate,
                    seed,
                    index: 0,
                    metric: "time_to_solve".to_string(),
                    value: curve.time_to_solve(v_star).map_or(not_found, |e| e as f64),
                });
            }
            ReplicateOutput {
                rows,
                report: None,
                learned: None,
                error: None,
            }
        }
        Err(e) => ReplicateOutput {
            rows,
            report: None,
            learned: None,
            error: Some(e.to_string()),
        },
    }
}

pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub rows: Vec<MetricRow>,
    /// Diagnostic report of the first successful replicate, when the
    /// algorithm produces one.
    pub first_report: Option<RunReport>,
    /// Learned model of the first successful replicate.
    pub first_learned: Option<LearnedModel>,
}

/// Run every replicate, write one CSV per metric plus `summary.json` under
/// `out_dir`, and return the summary.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutcome, HarnessError> {
    if config.replicates == 0 {
        return Err(HarnessError::BadConfig(
            "replicates must be positive".into(),
        ));
    }
    let root = SeedStream::new(config.seed);
    let outputs: Vec<ReplicateOutput> = (0..config.replicates)
        .into_par_iter()
        .map(|replicate| {
            let seed = root.child(replicate as u64).seed();
            // Environment is rebuilt per replicate: presets without a pinned
            // seed randomize their action labels each time.
            let model = match config.environment.build(seed ^ 0xE17) {
                Ok(m) => m,
                Err(e) => {
                    return ReplicateOutput {
                        rows: Vec::new(),
                        report: None,
                        learned: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            match &config.algorithm {
                AlgorithmConfig::PcidStochastic {
                    pcid,
                    diag,
                    plan_rewards,
                } => pcid_replicate(
                    &model,
                    false,
                    pcid,
                    diag.unwrap_or_default(),
                    *plan_rewards,
                    replicate,
                    seed,
                ),
                AlgorithmConfig::PcidDeterministic {
                    pcid,
                    diag,
                    plan_rewards,
                } => pcid_replicate(
                    &model,
                    true,
                    pcid,
                    diag.unwrap_or_default(),
                    *plan_rewards,
                    replicate,
                    seed,
                ),
                AlgorithmConfig::QLearningLatent { q } => {
                    qlearning_replicate(&model, ObservationMode::LatentCheating, q, replicate, seed)
                }
                AlgorithmConfig::QLearningDecoded { q } => {
                    qlearning_replicate(&model, ObservationMode::Decoded, q, replicate, seed)
                }
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut first_report = None;
    let mut first_learned = None;
    for (replicate, output) in outputs.into_iter().enumerate() {
        rows.extend(output.rows);
        if let Some(e) = output.error {
            errors.push((replicate, e));
        }
        if first_report.is_none() {
            first_report = output.report;
        }
        if first_learned.is_none() {
            first_learned = output.learned;
        }
    }

    // Group rows per metric, then per index, and summarize.
    let mut by_metric: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
    for row in &rows {
        by_metric.entry(row.metric.clone()).or_default().push(row);
    }
    let mut summary = ExperimentSummary {
        errors,
        ..Default::default()
    };
    for (metric, metric_rows) in &by_metric {
        let mut by_index: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for row in metric_rows {
            by_index.entry(row.index).or_default().push(row.value);
        }
        let quantiles = by_index
            .into_iter()
            .map(|(index, values)| QuantileSummary {
                index,
                median: percentile(&values, 0.5),
                p10: percentile(&values, 0.1),
                p90: percentile(&values, 0.9),
                count: values.len(),
            })
            .collect();
        summary.metrics.insert(metric.clone(), quantiles);
    }

    fs::create_dir_all(out_dir)?;
    for (metric, metric_rows) in &by_metric {
        let mut file = fs::File::create(out_dir.join(format!("{metric}.csv")))?;
        file.write_all(b"replicate,seed,level_or_episode,metric,value\n")?;
        for row in metric_rows {
            writeln!(
                file,
                "{},{},{},{},{}",
                row.replicate, row.seed, row.index, row.metric, row.value
            )?;
        }
    }
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail"),
    )?;

    Ok(ExperimentOutcome {
        summary,
        rows,
        first_report,
        first_learned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_is_nearest_rank() {
        let values = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(percentile(&values, 0.5), 3.0);
        assert_eq!(percentile(&values, 0.1), 1.0);
        assert_eq!(percentile(&values, 0.9), 5.0);
        assert_eq!(percentile(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn summary_quantiles_match_an_independent_sort() {
        let config = ExperimentConfig {
            environment: EnvPreset::TwoStateChain { horizon: 2, dim: 3 },
            algorithm: AlgorithmConfig::PcidStochastic {
                pcid: PcidConfig {
                    n_regression: 400,
                    n_embedding: 60,
                    n_transition: 400,
                    n_boost: 1,
                    threshold: 0.5,
                    max_states: 2,
                    reuse_samples: true,
                },
                diag: Some(DiagOptions {
                    samples_per_state: 100,
                    mc_episodes: 200,
                }),
                plan_rewards: None,
            },
            replicates: 5,
            seed: 99,
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert!(outcome.summary.errors.is_empty());
        for (metric, quantiles) in &outcome.summary.metrics {
            for q in quantiles {
                let mut values: Vec<f64> = outcome
                    .rows
                    .iter()
                    .filter(|r| &r.metric == metric && r.index == q.index)
                    .map(|r| r.value)
                    .collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = values.len();
                assert_eq!(q.count, n);
                assert_eq!(
                    q.median,
                    values[((0.5 * n as f64).ceil() as usize).max(1) - 1]
                );
                assert_eq!(q.p10, values[((0.1 * n as f64).ceil() as usize).max(1) - 1]);
                assert_eq!(q.p90, values[((0.9 * n as f64).ceil() as usize).max(1) - 1]);
            }
        }
    }

    #[test]
    fn single_replicate_median_is_the_value() {
        let config = ExperimentConfig {
            environment: EnvPreset::TwoStateChain { horizon: 1, dim: 3 },
            algorithm: AlgorithmConfig::PcidStochastic {
                pcid: PcidConfig {
                    n_regression: 300,
                    n_embedding: 50,
                    n_transition: 300,
                    n_boost: 1,
                    threshold: 0.5,
                    max_states: 2,
                    reuse_samples: true,
                },
                diag: Some(DiagOptions {
                    samples_per_state: 50,
                    mc_episodes: 100,
                }),
                plan_rewards: None,
            },
            replicates: 1,
            seed: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        for quantiles in outcome.summary.metrics.values() {
            for q in quantiles {
                assert_eq!(q.count, 1);
                assert_eq!(q.median, q.p10);
                assert_eq!(q.median, q.p90);
            }
        }
    }

    #[test]
    fn rerunning_the_same_config_is_byte_identical() {
        let config = ExperimentConfig {
            environment: EnvPreset::DiagonalLockBernoulli {
                horizon: 3,
                dim: Some(4),
                switch_prob: 0.0,
                num_actions: 3,
                terminal_reward: true,
                perm_seed: None,
            },
            algorithm: AlgorithmConfig::QLearningLatent {
                q: QLearningConfig {
                    episodes: 600,
                    learning_rate: 0.2,
                    eps_start: 1.0,
                    eps_end: 0.05,
                    eps_decay_fraction: 0.2,
                },
            },
            replicates: 3,
            seed: 31,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&config, dir_a.path()).unwrap();
        run_experiment(&config, dir_b.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.contains(&"running_avg_reward.csv".to_string()));
        assert!(names.contains(&"summary.json".to_string()));
        for name in names {
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }
}
