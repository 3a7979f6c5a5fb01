//! Cover learning for deterministic dynamics.
//!
//! With deterministic transitions every cover policy is a fixed action
//! sequence reaching its state with probability one, so no decoder is
//! needed on the roll-in: the regression label is the index of the sampled
//! cover policy itself. Embedding accuracy is boosted by averaging the
//! predictions of `n_boost` rollouts of each extended sequence before
//! clustering; each cluster contributes one extended sequence to the next
//! cover, and the cluster assignment of each (policy, action) pair doubles
//! as a deterministic transition row.

use rand::Rng;
use rayon::prelude::*;

use super::{CoverPolicy, LearnedLevel, LearnedModel, PcidConfig, PcidError};
use crate::bmdp::{sample_trajectory, ActionSequencePolicy, BmdpModel, TransitionTable};
use crate::clustering::{threshold_cluster, Decoder};
use crate::embedding::{fit_erm, Embedding, PairIndex, RegressionDataset};
use crate::rng::SeedStream;

pub fn run_pcid_deterministic(
    env: &BmdpModel,
    config: &PcidConfig,
    seed: u64,
) -> Result<LearnedModel, PcidError> {
    config.check(true)?;
    let seeds = SeedStream::new(seed);
    let k = env.num_actions;
    let mut episode: u64 = 0;
    let mut levels: Vec<LearnedLevel> = Vec::with_capacity(env.horizon);
    let mut cover: Vec<Vec<usize>> = vec![Vec::new()]; // action sequences

    for level in 2..=env.horizon + 1 {
        let prev_states = cover.len();

        // Regression step: the sampled cover index is the label.
        let index = PairIndex::new(prev_states, config.max_states, k);
        let mut data = RegressionDataset::new(index, env.context_dim());
        let first = episode;
        let rows: Vec<(usize, usize, Vec<f64>)> = (0..config.n_regression)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds.episode_rng(first + i as u64);
                let j = rng.random_range(0..prev_states);
                let a = rng.random_range(0..k);
                let mut actions = cover[j].clone();
                actions.push(a);
                let policy = ActionSequencePolicy::new(actions);
                let t = sample_trajectory(env, &policy, level - 1, &mut rng);
                (j, a, t.final_context)
            })
            .collect();
        episode += config.n_regression as u64;
        for (j, a, x) in rows {
            data.push(x, j, a)?;
        }
        let embedder = fit_erm(&data)?;

        // Boosting step: average n_boost predictions per extended sequence.
        let mut points: Vec<Embedding> = Vec::with_capacity(prev_states * k);
        let mut extended: Vec<Vec<usize>> = Vec::with_capacity(prev_states * k);
        for (j, sequence) in cover.iter().enumerate() {
            for a in 0..k {
                let mut actions = sequence.clone();
                actions.push(a);
                let policy = ActionSequencePolicy::new(actions.clone());
                let first = episode;
                let predictions: Vec<Vec<f64>> = (0..config.n_boost)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = seeds.episode_rng(first + i as u64);
                        let t = sample_trajectory(env, &policy, level - 1, &mut rng);
                        embedder.predict(&t.final_context).map(|e| e.coords)
                    })
                    .collect::<Result<_, _>>()?;
                episode += config.n_boost as u64;
                let mut mean = vec![0.0; index.dim()];
                for p in &predictions {
                    for (m, v) in mean.iter_mut().zip(p) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= config.n_boost as f64;
                }
                points.push(Embedding {
                    coords: mean,
                    index,
                });
                extended.push(actions);
                let _ = j;
            }
        }

        // Clustering step; each cluster keeps its center's action sequence.
        let clusters = threshold_cluster(&points, config.threshold)?;
        let num_states = clusters.num_clusters();
        let cap_exceeded = num_states > config.max_states;
        let mut next_cover = Vec::with_capacity(num_states);
        let mut policies = Vec::with_capacity(num_states);
        for c in 0..num_states {
            let center = clusters
                .center_point(c)
                .expect("every cluster has a first member");
            next_cover.push(extended[center].clone());
            policies.push(CoverPolicy::Sequence {
                actions: extended[center].clone(),
            });
        }

        // The cluster assignment of each pair is a deterministic transition
        // row out of (previous state, action).
        let mut transitions: TransitionTable = vec![vec![vec![0.0; num_states]; k]; prev_states];
        for (pair, &cluster) in clusters.assignments.iter().enumerate() {
            let (s, a) = (pair / k, pair % k);
            transitions[s][a][cluster] = 1.0;
        }

        levels.push(LearnedLevel {
            decoder: Decoder {
                embedder,
                centers: clusters.centers,
            },
            transitions,
            policies,
            cap_exceeded,
        });
        cover = next_cover;
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
