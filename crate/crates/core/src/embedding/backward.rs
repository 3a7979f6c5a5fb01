//! Exact backward probability vectors and separability diagnostics.

use super::{l1_distance, Embedding, EmbeddingError, PairIndex};
use crate::bmdp::BmdpModel;

/// Uniform roll-in over the (state, action) pairs of the level preceding
/// `level`, in pair-coordinate order.
pub fn uniform_roll_in(model: &BmdpModel, level: usize) -> Vec<f64> {
    let pairs = model.states_at(level - 1) * model.num_actions;
    vec![1.0 / pairs as f64; pairs]
}

/// Exact backward probability vector of `target` at the 1-indexed `level`
/// (>= 2), under a roll-in distribution over the previous level's pairs
/// given in pair-coordinate order. Padded to `cap` states.
pub fn backward_vector_exact(
    model: &BmdpModel,
    level: usize,
    roll_in: &[f64],
    target: usize,
    cap: usize,
) -> Result<Embedding, EmbeddingError> {
    let prev_states = model.states_at(level - 1);
    let index = PairIndex::new(prev_states, cap, model.num_actions);
    assert_eq!(
        roll_in.len(),
        index.populated(),
        "roll-in must cover every (state, action) pair of level {}",
        level - 1
    );
    let table = model.table_at(level - 1);
    let mut coords = vec![0.0; index.dim()];
    let mut total = 0.0;
    for (c, (s, a)) in index.pairs().enumerate() {
        let mass = table[s][a][target] * roll_in[c];
        coords[c] = mass;
        total += mass;
    }
    if total <= 0.0 {
        return Err(EmbeddingError::UnreachableTarget { target });
    }
    for v in &mut coords {
        *v /= total;
    }
    Ok(Embedding { coords, index })
}

/// Minimum pairwise L1 distance between the backward vectors of distinct
/// states at `level`; `None` when the level has fewer than two states, and
/// 0 is a legal return (an unidentifiable level).
pub fn separability_margin(
    model: &BmdpModel,
    level: usize,
    roll_in: &[f64],
) -> Result<Option<f64>, EmbeddingError> {
    let n = model.states_at(level);
    if n < 2 {
        return Ok(None);
    }
    let vectors: Vec<Embedding> = (0..n)
        .map(|s| backward_vector_exact(model, level, roll_in, s, model.states_at(level - 1)))
        .collect::<Result<_, _>>()?;
    let mut margin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            margin = margin.min(l1_distance(&vectors[i].coords, &vectors[j].coords));
        }
    }
    Ok(Some(margin))
}
