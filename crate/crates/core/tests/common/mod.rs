#![allow(dead_code)]

//! Shared test oracles, written independently of the library's planning
//! and embedding code paths.

use pcid_core::bmdp::{BmdpModel, ObservationProcess, TransitionTable};

/// Forward evaluation of a per-level state-to-action assignment, by direct
/// occupancy propagation (independent of the library's planners).
pub fn forward_reach(
    model: &BmdpModel,
    actions: &[Vec<usize>],
    level: usize,
    target: usize,
) -> f64 {
    let mut occ = vec![1.0];
    for l in 1..level {
        let table = model.table_at(l);
        let mut next = vec![0.0; model.states_at(l + 1)];
        for (s, &mass) in occ.iter().enumerate() {
            let a = actions[l - 1][s];
            for (s2, &p) in table[s][a].iter().enumerate() {
                next[s2] += mass * p;
            }
        }
        occ = next;
    }
    occ[target]
}

/// Maximum reaching probability by exhaustive enumeration of every latent
/// policy on the prefix.
pub fn brute_force_max_reach(model: &BmdpModel, level: usize, target: usize) -> f64 {
    let widths: Vec<usize> = (1..level).map(|l| model.states_at(l)).collect();
    let slots: usize = widths.iter().sum();
    let k = model.num_actions;
    let combos = k.pow(slots as u32);
    let mut best: f64 = 0.0;
    for code in 0..combos {
        let mut c = code;
        let mut actions = Vec::with_capacity(widths.len());
        for &w in &widths {
            let mut per = Vec::with_capacity(w);
            for _ in 0..w {
                per.push(c % k);
                c /= k;
            }
            actions.push(per);
        }
        best = best.max(forward_reach(model, &actions, level, target));
    }
    best
}

/// Model with prescribed transition tables and scaled one-hot emissions.
pub fn model_from_tables(
    widths: &[usize],
    num_actions: usize,
    transitions: Vec<TransitionTable>,
) -> BmdpModel {
    let max_width = widths.iter().copied().max().unwrap();
    let patterns = widths
        .iter()
        .map(|&w| {
            (0..w)
                .map(|s| {
                    let mut p = vec![0.0; max_width];
                    p[s] = 10.0;
                    p
                })
                .collect()
        })
        .collect();
    BmdpModel {
        horizon: widths.len() - 1,
        num_actions,
        states_per_level: widths.to_vec(),
        transitions,
        emitter: ObservationProcess::PatternBernoulli {
            dim: max_width + 2,
            patterns,
        },
        rewards: None,
    }
    .validated()
    .expect("test model is valid")
}
