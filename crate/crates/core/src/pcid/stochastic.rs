//! Cover learning for stochastic dynamics.
//!
//! Per level: roll in with a uniform mixture over the previous cover
//! extended by a uniform action; decode the previous state with the
//! previous decoder; fit the context embedding by least squares on one-hot
//! pair targets; threshold-cluster predicted embeddings into learned
//! states; estimate transition rows as empirical conditionals (unseen
//! (state, action) rows fall back to uniform); and plan one reaching policy
//! per learned state by backward induction.

use std::sync::Arc;

use rayon::prelude::*;

use super::{CoverPolicy, DecodedPolicy, LearnedLevel, LearnedModel, PcidConfig, PcidError};
use crate::bmdp::{
    sample_batch, BatchPolicy, BmdpModel, ContextPolicy, PolicyMixture, TransitionTable,
    TrivialPolicy,
};
use crate::clustering::{threshold_cluster, Decoder};
use crate::embedding::{fit_erm, PairIndex, RegressionDataset};
use crate::pcid::plan::plan_reach;
use crate::rng::SeedStream;

/// Empirical conditional frequencies from decoded (prev, action, next)
/// triples; rows with no samples are uniform over the next level.
pub fn estimate_transitions(
    triples: &[(usize, usize, usize)],
    num_prev: usize,
    num_actions: usize,
    num_next: usize,
) -> TransitionTable {
    let mut counts = vec![vec![vec![0u64; num_next]; num_actions]; num_prev];
    for &(s, a, s2) in triples {
        counts[s][a][s2] += 1;
    }
    counts
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| {
                    let total: u64 = row.iter().sum();
                    if total == 0 {
                        vec![1.0 / num_next as f64; num_next]
                    } else {
                        row.into_iter().map(|c| c as f64 / total as f64).collect()
                    }
                })
                .collect()
        })
        .collect()
}

/// Observed slice of an episode used by the learner: the context and action
/// at the previous level, plus the context at the new level. True state
/// tags never cross this boundary.
struct LevelSample {
    prev_context: Vec<f64>,
    prev_action: usize,
    context: Vec<f64>,
}

fn collect_level_samples(
    env: &BmdpModel,
    cover: &[Arc<dyn ContextPolicy>],
    level: usize,
    count: usize,
    seeds: SeedStream,
    episode: &mut u64,
) -> Result<Vec<LevelSample>, PcidError> {
    let eta = PolicyMixture::uniform(cover.to_vec())
        .concat_uniform_actions(env.num_actions, env.horizon)?;
    let batch = sample_batch(
        env,
        BatchPolicy::Mixture(&eta),
        level - 1,
        seeds,
        *episode,
        count,
    );
    *episode += count as u64;
    Ok(batch
        .into_iter()
        .map(|mut t| {
            let last = t.steps.pop().expect("level >= 2 has at least one step");
            LevelSample {
                prev_context: last.context,
                prev_action: last.action,
                context: t.final_context,
            }
        })
        .collect())
}

pub fn run_pcid_stochastic(
    env: &BmdpModel,
    config: &PcidConfig,
    seed: u64,
) -> Result<LearnedModel, PcidError> {
    config.check(false)?;
    let seeds = SeedStream::new(seed);
    let k = env.num_actions;
    let mut episode: u64 = 0;
    let mut levels: Vec<LearnedLevel> = Vec::with_capacity(env.horizon);

    for level in 2..=env.horizon + 1 {
        let cover: Vec<Arc<dyn ContextPolicy>> = if level == 2 {
            vec![Arc::new(TrivialPolicy)]
        } else {
            let decoders: Vec<Decoder> = levels[..level - 3]
                .iter()
                .map(|l| l.decoder.clone())
                .collect();
            levels[level - 3]
                .policies
                .iter()
                .map(|p| match p {
                    CoverPolicy::Decoded { latent } => Arc::new(DecodedPolicy {
                        decoders: decoders.clone(),
                        latent: latent.clone(),
                    })
                        as Arc<dyn ContextPolicy>,
                    CoverPolicy::Sequence { .. } => {
                        unreachable!("stochastic runner emits decoded covers")
                    }
                })
                .collect()
        };
        let prev_states = if level == 2 {
            1
        } else {
            levels[level - 3].num_states()
        };
        let prev_decoder = if level == 2 {
            None
        } else {
            Some(&levels[level - 3].decoder)
        };
        let decode_prev = |x: &[f64]| -> Result<usize, PcidError> {
            match prev_decoder {
                None => Ok(0),
                Some(d) => Ok(d.decode(x)?),
            }
        };

        // Regression step.
        let samples =
            collect_level_samples(env, &cover, level, config.n_regression, seeds, &mut episode)?;
        let index = PairIndex::new(prev_states, config.max_states, k);
        let mut data = RegressionDataset::new(index, env.context_dim());
        let mut decoded_prev = Vec::with_capacity(samples.len());
        for s in &samples {
            let prev = decode_prev(&s.prev_context)?;
            decoded_prev.push(prev);
            data.push(s.context.clone(), prev, s.prev_action)?;
        }
        let embedder = fit_erm(&data)?;

        // Clustering step.
        let fresh_points;
        let point_contexts: Vec<&Vec<f64>> = if config.reuse_samples {
            samples
                .iter()
                .take(config.n_embedding)
                .map(|s| &s.context)
                .collect()
        } else {
            fresh_points =
                collect_level_samples(env, &cover, level, config.n_embedding, seeds, &mut episode)?;
            fresh_points.iter().map(|s| &s.context).collect()
        };
        let points = point_contexts
            .iter()
            .map(|x| embedder.predict(x))
            .collect::<Result<Vec<_>, _>>()?;
        let clusters = threshold_cluster(&points, config.threshold)?;
        let num_states = clusters.num_clusters();
        let cap_exceeded = num_states > config.max_states;
        let decoder = Decoder {
            embedder,
            centers: clusters.centers,
        };

        // Transition estimation.
        let triples: Vec<(usize, usize, usize)> = if config.reuse_samples {
            samples
                .par_iter()
                .zip(decoded_prev.par_iter())
                .take(config.n_transition)
                .map(|(s, &prev)| Ok((prev, s.prev_action, decoder.decode(&s.context)?)))
                .collect::<Result<_, PcidError>>()?
        } else {
            let fresh = collect_level_samples(
                env,
                &cover,
                level,
                config.n_transition,
                seeds,
                &mut episode,
            )?;
            fresh
                .par_iter()
                .map(|s| {
                    let prev = match prev_decoder {
                        None => 0,
                        Some(d) => d.decode(&s.prev_context)?,
                    };
                    Ok((prev, s.prev_action, decoder.decode(&s.context)?))
                })
                .collect::<Result<_, PcidError>>()?
        };
        let transitions = estimate_transitions(&triples, prev_states, k, num_states);

        // Planning step: one reaching policy per learned state.
        let mut tables: Vec<&TransitionTable> = levels.iter().map(|l| &l.transitions).collect();
        tables.push(&transitions);
        let policies = (0..num_states)
            .map(|target| {
                let (latent, _) = plan_reach(&tables, target);
                CoverPolicy::Decoded { latent }
            })
            .collect();

        levels.push(LearnedLevel {
            decoder,
            transitions,
            policies,
            cap_exceeded,
        });
    }

    let learned = LearnedModel {
        horizon: env.horizon,
        num_actions: k,
        max_states: config.max_states,
        levels,
        episodes_used: episode,
    };
    if !learned.any_cap_exceeded() {
        assert!(
            learned.cover_size() <= config.max_states * env.horizon,
            "cover size exceeds the per-level cap times the horizon"
        );
    }
    Ok(learned)
}
