//! Embedding of contexts and latent states into the shared space `R^{MK}`.
//!
//! Coordinates are indexed by (previous state, action) pairs in
//! lexicographic order with states in discovery order; unused slots (when
//! fewer than `M` states exist) are zero padding. The exact state embedding
//! of a next-level state `s'` under a roll-in distribution `nu` over pairs
//! is the backward probability vector
//!
//! ```text
//! b_nu(s, a | s') = p(s' | s, a) nu(s, a) / sum_{t, b} p(s' | t, b) nu(t, b)
//! ```
//!
//! which also arises as the population least-squares solution when one-hot
//! pair indicators are regressed on the next context. The fitted context
//! embedding is an unregularized linear map (no intercept) learned by the
//! ERM oracle in [`fit_erm`].

mod backward;
mod erm;

pub use backward::{backward_vector_exact, separability_margin, uniform_roll_in};
pub use erm::{fit_erm, ErmError, RegressionDataset};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("context has dimension {found}, embedder expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target state {target} is unreachable under the roll-in distribution")]
    UnreachableTarget { target: usize },
}

/// Coordinate map for (state, action) pairs of one level, padded to a
/// capacity of `cap` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    num_states: usize,
    cap: usize,
    num_actions: usize,
}

impl PairIndex {
    /// The capacity is raised to `num_states` if the cap is exceeded, so an
    /// over-discovered level still gets a coordinate per pair.
    pub fn new(num_states: usize, cap: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            cap: cap.max(num_states),
            num_actions,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Total coordinate count, padding included.
    pub fn dim(&self) -> usize {
        self.cap * self.num_actions
    }

    /// Number of coordinates backed by real pairs.
    pub fn populated(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn coordinate(&self, state: usize, action: usize) -> usize {
        debug_assert!(state < self.num_states && action < self.num_actions);
        state * self.num_actions + action
    }

    pub fn pair(&self, coordinate: usize) -> (usize, usize) {
        (coordinate / self.num_actions, coordinate % self.num_actions)
    }

    /// Real pairs in coordinate order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.populated()).map(|c| self.pair(c))
    }
}

/// A point in the embedding space together with its coordinate map.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Vec<f64>,
    pub index: PairIndex,
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Linear context-embedding function `x -> W x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbedderFile", into = "EmbedderFile")]
pub struct LinearEmbedder {
    /// `weights[c]` is the row producing coordinate `c`; `index.dim()` rows
    /// of length `context_dim`.
    pub weights: Vec<Vec<f64>>,
    pub index: PairIndex,
}

impl LinearEmbedder {
    pub fn context_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Raw linear prediction; not projected onto the simplex.
    pub fn predict(&self, context: &[f64]) -> Result<Embedding, EmbeddingError> {
        if context.len() != self.context_dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.context_dim(),
                found: context.len(),
            });
        }
        let coords = self
            .weights
            .iter()
            .map(|row| row.iter().zip(context).map(|(w, x)| w * x).sum())
            .collect();
        Ok(Embedding {
            coords,
            index: self.index,
        })
    }
}

// ---------------------------------------------------------------------------
// Serialized form: explicit pair list, row-major weights, context dimension.

#[derive(Serialize, Deserialize)]
struct EmbedderFile {
    index: Vec<[usize; 2]>,
    weights: Vec<f64>,
    d: usize,
}

impl From<LinearEmbedder> for EmbedderFile {
    fn from(e: LinearEmbedder) -> Self {
        EmbedderFile {
            index: e.index.pairs().map(|(s, a)| [s, a]).collect(),
            weights: e.weights.iter().flatten().copied().collect(),
            d: e.context_dim(),
        }
    }
}

impl TryFrom<EmbedderFile> for LinearEmbedder {
    type Error = String;

    fn try_from(f: EmbedderFile) -> Result<Self, Self::Error> {
        if f.index.is_empty() || f.d == 0 {
            return Err("embedder file needs a nonempty pair index and d > 0".into());
        }
        let num_states = f.index.iter().map(|p| p[0]).max().unwrap() + 1;
        let num_actions = f.index.iter().map(|p| p[1]).max().unwrap() + 1;
        let lex: Vec<[usize; 2]> = (0..num_states)
            .flat_map(|s| (0..num_actions).map(move |a| [s, a]))
            .collect();
        if f.index != lex {
            return Err("pair index must list the full lexicographic product".into());
        }
        if !f.weights.len().is_multiple_of(f.d) {
            return Err("weights are not a whole number of rows".into());
        }
        let rows = f.weights.len() / f.d;
        if !rows.is_multiple_of(num_actions) || rows / num_actions < num_states {
            return Err("weight rows do not cover the pair index".into());
        }
        let index = PairIndex::new(num_states, rows / num_actions, num_actions);
        let weights = f.weights.chunks(f.d).map(|r| r.to_vec()).collect();
        Ok(LinearEmbedder { weights, index })
    }
}
