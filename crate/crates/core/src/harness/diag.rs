//! Diagnostics against simulator ground truth.
//!
//! These routines see the true state tags: they sample contexts from known
//! states, match learned ids to true ids by maximum-weight bipartite
//! matching on the confusion matrix, compare estimated transition rows
//! under the matching, and measure how well each cover policy reaches its
//! state against the exact maximum reaching probability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hungarian::min_cost_assignment;
use crate::bmdp::{
    exact_reach_probability, max_reach_probability, occupancy, sample_trajectory, BmdpModel,
    LatentPolicy, TransitionTable,
};
use crate::clustering::Decoder;
use crate::pcid::{CoverPolicy, LearnedModel, PcidConfig};
use crate::rng::SeedStream;

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("learned state {state} at level {level} has no matched true state")]
    UnmatchedState { level: usize, state: usize },
}

/// Match between learned and true states at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// For each learned id, the matched true id.
    pub matching: Vec<Option<usize>>,
    /// `confusion[true_state][learned_state]` decode counts.
    pub confusion: Vec<Vec<u64>>,
    /// Per true state, the fraction of its contexts decoded to its matched
    /// learned id (0 when unmatched).
    pub accuracy: Vec<f64>,
    /// True when the matching is a bijection.
    pub bijection_ok: bool,
}

/// Sample contexts per true state, decode them, and match learned ids to
/// true ids by maximum decode mass.
pub fn match_states(
    decoder: &Decoder,
    model: &BmdpModel,
    level: usize,
    samples_per_state: usize,
    seeds: SeedStream,
) -> MatchResult {
    let n_true = model.states_at(level);
    let n_learned = decoder.num_states();
    let mut confusion = vec![vec![0u64; n_learned]; n_true];
    for s in 0..n_true {
        for i in 0..samples_per_state {
            let mut rng = seeds.episode_rng((s * samples_per_state + i) as u64);
            let x = model.emitter.sample(level, s, &mut rng);
            if let Ok(d) = decoder.decode(&x) {
                confusion[s][d] += 1;
            }
        }
    }
    // Maximize matched mass: minimize negated counts over (learned, true).
    let cost: Vec<Vec<f64>> = (0..n_learned)
        .map(|l| (0..n_true).map(|t| -(confusion[t][l] as f64)).collect())
        .collect();
    let matching = if n_learned == 0 {
        Vec::new()
    } else {
        min_cost_assignment(&cost)
    };
    let mut accuracy = vec![0.0; n_true];
    for (l, t) in matching.iter().enumerate() {
        if let Some(t) = *t {
            accuracy[t] = confusion[t][l] as f64 / samples_per_state as f64;
        }
    }
    MatchResult {
        bijection_ok: n_learned == n_true && matching.iter().all(Option::is_some),
        matching,
        confusion,
        accuracy,
    }
}

/// Maximum over (state, action) of the L1 distance between estimated rows
/// and true rows, with both sides aligned by the matchings. True-state mass
/// not covered by any learned state counts toward the distance.
pub fn transition_error(
    estimated: &TransitionTable,
    model: &BmdpModel,
    level: usize,
    match_prev: &[Option<usize>],
    match_curr: &[Option<usize>],
) -> Result<f64, DiagError> {
    let table = model.table_at(level - 1);
    let n_true = model.states_at(level);
    let mut worst = 0.0f64;
    for (s_hat, rows) in estimated.iter().enumerate() {
        let s = match_prev[s_hat].ok_or(DiagError::UnmatchedState {
            level: level - 1,
            state: s_hat,
        })?;
        for (a, row) in rows.iter().enumerate() {
            let mut covered = vec![false; n_true];
            let mut l1 = 0.0;
            for (s2_hat, &p_hat) in row.iter().enumerate() {
                let s2 = match_curr[s2_hat].ok_or(DiagError::UnmatchedState {
                    level,
                    state: s2_hat,
                })?;
                covered[s2] = true;
                l1 += (p_hat - table[s][a][s2]).abs();
            }
            for (s2, &c) in covered.iter().enumerate() {
                if !c {
                    l1 += table[s][a][s2];
                }
            }
            worst = worst.max(l1);
        }
    }
    Ok(worst)
}

/// Cover quality of one true state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCoverReport {
    pub true_state: usize,
    /// Learned state whose policy was evaluated, when matched.
    pub learned_state: Option<usize>,
    /// Reaching probability of the cover policy: exact for action
    /// sequences, Monte-Carlo otherwise.
    pub reach: f64,
    /// Standard error of the Monte-Carlo estimate (`None` when exact).
    pub reach_stderr: Option<f64>,
    /// Exact reach of the latent plan composed with a perfect decoder,
    /// when every level below is bijectively matched.
    pub proxy_exact_reach: Option<f64>,
    /// Maximum reaching probability of the true state.
    pub max_reach: f64,
    /// `max_reach - reach`.
    pub gap: f64,
}

/// Evaluate the cover of one level against the exact maxima. `matchings`
/// holds the per-level match results for levels `2..=level`.
pub fn cover_quality(
    model: &BmdpModel,
    learned: &LearnedModel,
    level: usize,
    matchings: &[MatchResult],
    mc_episodes: usize,
    seeds: SeedStream,
) -> Vec<StateCoverReport> {
    let n_true = model.states_at(level);
    let match_here = &matchings[level - 2];
    (0..n_true)
        .into_par_iter()
        .map(|s| {
            let learned_state = match_here.matching.iter().position(|t| *t == Some(s));
            let (mu, _) = max_reach_probability(model, level, s);
            let (reach, stderr, proxy) = match learned_state {
                None => {
                    // Unmatched: no policy to evaluate, reach 0.
                    (0.0, None, None)
                }
                Some(s_hat) => match &learned.level(level).policies[s_hat] {
                    CoverPolicy::Sequence { actions } => {
                        // Exact forward evaluation; levels past the sequence
                        // fall back to the uniform default, like the
                        // simulator.
                        let widths: Vec<usize> = (1..level).map(|l| model.states_at(l)).collect();
                        let latent = LatentPolicy::from_sequence(actions, &widths);
                        let p = occupancy(model, Some(&latent), level)
                            .expect("sequence actions are in range")[level - 1][s];
                        (p, None, Some(p))
                    }
                    CoverPolicy::Decoded { latent } => {
                        let policy = learned.context_policy(level, s_hat);
                        let stream = seeds.child(level as u64 * 1000 + s as u64);
                        let hits: usize = (0..mc_episodes)
                            .into_par_iter()
                            .map(|i| {
                                let mut rng = stream.episode_rng(i as u64);
                                let t =
                                    sample_trajectory(model, policy.as_ref(), level - 1, &mut rng);
                                usize::from(t.final_state == s)
                            })
                            .sum();
                        let p = hits as f64 / mc_episodes as f64;
                        let se = (p * (1.0 - p) / mc_episodes as f64).sqrt();
                        // Perfect-decoder proxy: replay the latent plan on
                        // the true states through the level matchings.
                        let proxy = latent_on_true_states(latent, matchings, level)
                            .and_then(|psi| exact_reach_probability(model, &psi, level, s).ok());
                        (p, Some(se), proxy)
                    }
                },
            };
            StateCoverReport {
                true_state: s,
                learned_state,
                reach,
                reach_stderr: stderr,
                proxy_exact_reach: proxy,
                max_reach: mu,
                gap: mu - reach,
            }
        })
        .collect()
}

/// Translate a latent policy over learned ids into one over true ids via
/// the per-level matchings; `None` when any needed level is not a
/// bijection.
fn latent_on_true_states(
    latent: &LatentPolicy,
    matchings: &[MatchResult],
    level: usize,
) -> Option<LatentPolicy> {
    let mut actions = Vec::with_capacity(level - 1);
    for l in 1..level {
        if l == 1 {
            actions.push(vec![*latent.actions[0].first()?]);
            continue;
        }
        let m = &matchings[l - 2];
        if !m.bijection_ok {
            return None;
        }
        let n_true = m.confusion.len();
        let mut per_state = vec![usize::MAX; n_true];
        for (s_hat, t) in m.matching.iter().enumerate() {
            per_state[(*t)?] = latent.action(l, s_hat)?;
        }
        actions.push(per_state);
    }
    Some(LatentPolicy::new(actions))
}

/// Per-level diagnostics of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub states_discovered: usize,
    pub cap_exceeded: bool,
    pub bijection_ok: bool,
    /// Per true state decode accuracy under the matching.
    pub decode_accuracy: Vec<f64>,
    /// Max-row L1 transition error; `None` when a matching gap prevents
    /// alignment.
    pub transition_max_l1: Option<f64>,
    pub states: Vec<StateCoverReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: Option<PcidConfig>,
    pub cover_size: usize,
    pub episodes_used: u64,
    /// Seconds spent by the learner, when known. Never serialized into
    /// experiment artifacts, which must be rerun-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    pub levels: Vec<LevelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagOptions {
    pub samples_per_state: usize,
    pub mc_episodes: usize,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self {
            samples_per_state: 1000,
            mc_episodes: 2000,
        }
    }
}

/// Full diagnostic pass over a learned model.
pub fn diagnose(
    model: &BmdpModel,
    learned: &LearnedModel,
    options: DiagOptions,
    seed: u64,
) -> RunReport {
    let seeds = SeedStream::new(seed);
    let mut matchings: Vec<MatchResult> = Vec::with_capacity(learned.levels.len());
    for level in 2..=model.num_levels() {
        matchings.push(match_states(
            &learned.level(level).decoder,
            model,
            level,
            options.samples_per_state,
            seeds.child(level as u64),
        ));
    }
    let mut levels = Vec::with_capacity(learned.levels.len());
    for level in 2..=model.num_levels() {
        let m = &matchings[level - 2];
        let match_prev: Vec<Option<usize>> = if level == 2 {
            vec![Some(0)]
        } else {
            matchings[level - 3].matching.clone()
        };
        let transition_max_l1 = transition_error(
            &learned.level(level).transitions,
            model,
            level,
            &match_prev,
            &m.matching,
        )
        .ok();
        let states = cover_quality(
            model,
            learned,
            level,
            &matchings,
            options.mc_episodes,
            seeds.child(0xC0FE + level as u64),
        );
        levels.push(LevelReport {
            level,
            states_discovered: learned.states_at(level),
            cap_exceeded: learned.level(level).cap_exceeded,
            bijection_ok: m.bijection_ok,
            decode_accuracy: m.accuracy.clone(),
            transition_max_l1,
            states,
        });
    }
    RunReport {
        seed,
        config: None,
        cover_size: learned.cover_size(),
        episodes_used: learned.episodes_used,
        wall_clock_secs: None,
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Decoder;
    use crate::embedding::{backward_vector_exact, uniform_roll_in, Embedding, LinearEmbedder};
    use crate::envs::{self, LockSpec};

    /// Embedder solving the interpolation equations of the lock level
    /// exactly, paired with the exact backward vectors as centers.
    fn exact_lock_decoder(model: &BmdpModel, level: usize) -> Decoder {
        let nu = uniform_roll_in(model, level);
        let n = model.states_at(level);
        let b: Vec<Embedding> = (0..n)
            .map(|s| backward_vector_exact(model, level, &nu, s, 3).unwrap())
            .collect();
        let dim = b[0].index.dim();
        let d = model.context_dim();
        // Patterns: live0 = 10 e0, live1 = 10 e1 + 10 e2, dead = 10 e2.
        let mut weights = vec![vec![0.0; d]; dim];
        for c in 0..dim {
            let b0 = b[0].coords[c];
            let b1 = b.get(1).map_or(0.0, |e| e.coords[c]);
            let b2 = b.get(2).map_or(0.0, |e| e.coords[c]);
            weights[c][0] = b0 / 10.0;
            weights[c][2] = b2 / 10.0;
            weights[c][1] = (b1 - b2) / 10.0;
        }
        Decoder {
            embedder: LinearEmbedder {
                weights,
                index: b[0].index,
            },
            centers: b,
        }
    }

    #[test]
    fn perfect_decoder_matches_identically_with_full_accuracy() {
        let model = envs::stochastic_lock(&LockSpec::contextual(6, 5)).unwrap();
        let decoder = exact_lock_decoder(&model, 4);
        let result = match_states(&decoder, &model, 4, 400, SeedStream::new(3));
        assert!(result.bijection_ok);
        for s in 0..3 {
            assert_eq!(result.accuracy[s], 1.0, "state {s}");
            // The matched learned id concentrates all the mass.
            let l = result.matching.iter().position(|t| *t == Some(s)).unwrap();
            assert_eq!(result.confusion[s][l], 400);
        }
    }

    #[test]
    fn lock_population_decoding_is_nearly_perfect() {
        // Margin 1.6 with noise-free realizable emissions decodes every
        // context correctly; verify on a large sample.
        let model = envs::stochastic_lock(&LockSpec::contextual(6, 5)).unwrap();
        let decoder = exact_lock_decoder(&model, 4);
        let result = match_states(&decoder, &model, 4, 10_000, SeedStream::new(8));
        for s in 0..3 {
            assert!(result.accuracy[s] >= 0.99);
        }
    }

    #[test]
    fn collapsed_decoder_fails_the_bijection_check() {
        let model = envs::stochastic_lock(&LockSpec::contextual(5, 5)).unwrap();
        let mut decoder = exact_lock_decoder(&model, 4);
        decoder.centers.pop(); // two learned states for three true ones
        let result = match_states(&decoder, &model, 4, 200, SeedStream::new(4));
        assert!(!result.bijection_ok);
        assert_eq!(result.accuracy.iter().filter(|&&a| a == 0.0).count(), 1);
    }

    #[test]
    fn accuracy_is_invariant_under_learned_id_relabeling() {
        let model = envs::stochastic_lock(&LockSpec::contextual(5, 5)).unwrap();
        let decoder = exact_lock_decoder(&model, 3);
        let mut permuted = decoder.clone();
        permuted.centers.swap(0, 2);
        let a = match_states(&decoder, &model, 3, 500, SeedStream::new(5));
        let b = match_states(&permuted, &model, 3, 500, SeedStream::new(5));
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.bijection_ok, b.bijection_ok);
    }

    #[test]
    fn permuted_truth_has_zero_transition_error() {
        let model = envs::stochastic_lock(&LockSpec::contextual(5, 5)).unwrap();
        let truth = model.table_at(3);
        // Learned ids are a cyclic relabeling of the truth on both levels.
        let perm = [2usize, 0, 1];
        let mut permuted: TransitionTable = vec![vec![vec![0.0; 3]; 2]; 3];
        for s in 0..3 {
            for a in 0..2 {
                for s2 in 0..3 {
                    permuted[perm[s]][a][perm[s2]] = truth[s][a][s2];
                }
            }
        }
        let matching: Vec<Option<usize>> = vec![Some(1), Some(2), Some(0)];
        let err = transition_error(&permuted, &model, 4, &matching, &matching).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn printed_row_discrepancy_is_sixteen_thousandths() {
        let model = envs::stochastic_lock(&LockSpec::contextual(5, 5)).unwrap();
        let mut estimated = model.table_at(3).clone();
        // True row is (0.9, 0.1, 0); perturb both live entries by 0.008.
        estimated[0][0] = vec![0.908, 0.092, 0.0];
        let matching: Vec<Option<usize>> = (0..3).map(Some).collect();
        let err = transition_error(&estimated, &model, 4, &matching, &matching).unwrap();
        assert!((err - 0.016).abs() < 1e-9, "err = {err}");
    }

    #[test]
    fn uniform_row_against_point_mass_errs_four_thirds() {
        let lock = envs::stochastic_lock(&LockSpec::contextual(4, 5)).unwrap();
        let mut estimated = lock.table_at(2).clone();
        for row in estimated.iter_mut().flatten() {
            *row = vec![1.0 / 3.0; 3];
        }
        let matching: Vec<Option<usize>> = (0..3).map(Some).collect();
        let err = transition_error(&estimated, &lock, 3, &matching, &matching).unwrap();
        // Worst row is a point mass: |1/3 - 1| + 1/3 + 1/3 = 4/3.
        assert!((err - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_cover_gap_is_max_reach_minus_uniform_reach() {
        use crate::bmdp::exact_reach_uniform;
        use crate::embedding::PairIndex;
        use crate::pcid::{CoverPolicy, LearnedLevel, LearnedModel};

        let model = envs::two_state_chain(1, 3);
        let index = PairIndex::new(1, 2, 2);
        let dummy_decoder = Decoder {
            embedder: LinearEmbedder {
                weights: vec![vec![0.0; 3]; index.dim()],
                index,
            },
            centers: vec![
                Embedding {
                    coords: vec![0.0; index.dim()],
                    index,
                };
                2
            ],
        };
        // A "cover" of 0-step policies: every episode acts uniformly.
        let learned = LearnedModel {
            horizon: 1,
            num_actions: 2,
            max_states: 2,
            levels: vec![LearnedLevel {
                decoder: dummy_decoder,
                transitions: vec![vec![vec![0.5, 0.5]; 2]],
                policies: vec![
                    CoverPolicy::Sequence { actions: vec![] },
                    CoverPolicy::Sequence { actions: vec![] },
                ],
                cap_exceeded: false,
            }],
            episodes_used: 0,
        };
        let matching = MatchResult {
            matching: vec![Some(0), Some(1)],
            confusion: vec![vec![1, 0], vec![0, 1]],
            accuracy: vec![1.0, 1.0],
            bijection_ok: true,
        };
        let reports = cover_quality(&model, &learned, 2, &[matching], 10, SeedStream::new(0));
        for report in &reports {
            let uniform = exact_reach_uniform(&model, 2, report.true_state);
            let (mu, _) = max_reach_probability(&model, 2, report.true_state);
            assert!((report.reach - uniform).abs() < 1e-12);
            assert!((report.gap - (mu - uniform)).abs() < 1e-12);
        }
        // The chain: both states have max reach 1, uniform reach 1/2.
        assert!((reports[0].gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_state_level_has_zero_gap() {
        use crate::embedding::PairIndex;
        use crate::pcid::{CoverPolicy, LearnedLevel, LearnedModel};

        let model = envs::random_bmdp(&[1, 1], 2, 3, false);
        let index = PairIndex::new(1, 1, 2);
        let learned = LearnedModel {
            horizon: 1,
            num_actions: 2,
            max_states: 1,
            levels: vec![LearnedLevel {
                decoder: Decoder {
                    embedder: LinearEmbedder {
                        weights: vec![vec![0.0; model.context_dim()]; index.dim()],
                        index,
                    },
                    centers: vec![Embedding {
                        coords: vec![0.0; index.dim()],
                        index,
                    }],
                },
                transitions: vec![vec![vec![1.0]; 2]],
                policies: vec![CoverPolicy::Sequence { actions: vec![0] }],
                cap_exceeded: false,
            }],
            episodes_used: 0,
        };
        let matching = MatchResult {
            matching: vec![Some(0)],
            confusion: vec![vec![1]],
            accuracy: vec![1.0],
            bijection_ok: true,
        };
        let reports = cover_quality(&model, &learned, 2, &[matching], 10, SeedStream::new(0));
        assert_eq!(reports[0].gap, 0.0);
    }

    #[test]
    fn transition_error_satisfies_a_triangle_bound() {
        use rand::Rng;
        // Level 4 has three predecessor states, matching the random tables.
        let model = envs::stochastic_lock(&LockSpec::contextual(4, 5)).unwrap();
        let matching: Vec<Option<usize>> = (0..3).map(Some).collect();
        let mut rng = SeedStream::new(6).rng();
        let mut random_table = || -> TransitionTable {
            (0..3)
                .map(|_| {
                    (0..2)
                        .map(|_| {
                            let mut row: Vec<f64> =
                                (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
                            let t: f64 = row.iter().sum();
                            row.iter_mut().for_each(|v| *v /= t);
                            row
                        })
                        .collect()
                })
                .collect()
        };
        for _ in 0..50 {
            let p = random_table();
            let q = random_table();
            let d_pt = transition_error(&p, &model, 4, &matching, &matching).unwrap();
            let d_qt = transition_error(&q, &model, 4, &matching, &matching).unwrap();
            // Direct max-row L1 between p and q.
            let mut d_pq = 0.0f64;
            for s in 0..3 {
                for a in 0..2 {
                    let l1: f64 = p[s][a]
                        .iter()
                        .zip(&q[s][a])
                        .map(|(x, y)| (x - y).abs())
                        .sum();
                    d_pq = d_pq.max(l1);
                }
            }
            assert!(d_pt <= d_pq + d_qt + 1e-12);
        }
    }
}
