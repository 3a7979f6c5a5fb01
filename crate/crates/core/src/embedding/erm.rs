//! Least-squares regression oracle for the linear class.
//!
//! Targets are one-hot pair indicators, so the vector-valued problem
//! separates into per-coordinate ordinary least squares sharing one Gram
//! matrix: `W^T = (X^T X)^+ X^T Y`, with no intercept. The pseudo-inverse
//! drops spectral components below `1e-10` times the largest eigenvalue.

use thiserror::Error;

use super::{LinearEmbedder, PairIndex};

#[derive(Debug, Error, PartialEq)]
pub enum ErmError {
    #[error("regression dataset is empty")]
    EmptyDataset,
    #[error("context has dimension {found}, dataset expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("pair (state {state}, action {action}) is outside the index")]
    BadTarget { state: usize, action: usize },
}

/// Rows of (context, one-hot target) under a fixed pair index. Targets are
/// stored as pair coordinates; padding coordinates are never targets.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    index: PairIndex,
    context_dim: usize,
    contexts: Vec<Vec<f64>>,
    targets: Vec<usize>,
}

impl RegressionDataset {
    pub fn new(index: PairIndex, context_dim: usize) -> Self {
        Self {
            index,
            context_dim,
            contexts: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, context: Vec<f64>, state: usize, action: usize) -> Result<(), ErmError> {
        if context.len() != self.context_dim {
            return Err(ErmError::DimensionMismatch {
                expected: self.context_dim,
                found: context.len(),
            });
        }
        if state >= self.index.num_states() || action >= self.index.num_actions() {
            return Err(ErmError::BadTarget { state, action });
        }
        self.contexts.push(context);
        self.targets.push(self.index.coordinate(state, action));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn index(&self) -> PairIndex {
        self.index
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the matrix of eigenvectors as columns.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a[i][i]).collect();
    (eigvals, v)
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix via spectral
/// decomposition, dropping eigenvalues below `1e-10` of the largest.
fn pinv_sym(a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let (eigvals, v) = jacobi_eigen(a);
    let max_eig = eigvals.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-10 * max_eig;
    let mut out = vec![vec![0.0; n]; n];
    for (k, &lambda) in eigvals.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let inv = 1.0 / lambda;
        for i in 0..n {
            let vi = v[i][k];
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += inv * vi * v[j][k];
            }
        }
    }
    out
}

/// Fit the empirical least-squares minimizer over linear maps.
pub fn fit_erm(data: &RegressionDataset) -> Result<LinearEmbedder, ErmError> {
    if data.is_empty() {
        return Err(ErmError::EmptyDataset);
    }
    let d = data.context_dim;
    let out_dim = data.index.dim();

    // Gram matrix X^T X and, since targets are one-hot, X^T Y column sums.
    let mut gram = vec![vec![0.0; d]; d];
    let mut xty = vec![vec![0.0; out_dim]; d];
    for (x, &t) in data.contexts.iter().zip(&data.targets) {
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                gram[i][j] += xi * x[j];
            }
            xty[i][t] += xi;
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }

    let pinv = pinv_sym(gram);
    let mut weights = vec![vec![0.0; d]; out_dim];
    for c in 0..out_dim {
        for j in 0..d {
            let mut w = 0.0;
            for k in 0..d {
                w += pinv[j][k] * xty[k][c];
            }
            weights[c][j] = w;
        }
    }
    Ok(LinearEmbedder {
        weights,
        index: data.index,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::embedding::{backward_vector_exact, l1_distance, uniform_roll_in};
    use crate::envs;
    use crate::rng::SeedStream;

    /// Uniform pair sampling on the two-state deterministic chain, where the
    /// population regressor is known in closed form.
    fn chain_dataset(n: usize, seed: u64) -> RegressionDataset {
        let model = envs::two_state_chain(10, 5);
        let index = PairIndex::new(2, 2, 2);
        let mut data = RegressionDataset::new(index, 5);
        let seeds = SeedStream::new(seed);
        let table = model.table_at(3);
        for ep in 0..n {
            let mut rng = seeds.episode_rng(ep as u64);
            let s = rng.random_range(0..2usize);
            let a = rng.random_range(0..2usize);
            let s2 = table[s][a].iter().position(|&p| p == 1.0).unwrap();
            let x = model.emitter.sample(4, s2, &mut rng);
            data.push(x, s, a).unwrap();
        }
        data
    }

    #[test]
    fn chain_regression_recovers_the_known_weight_pattern() {
        let data = chain_dataset(1000, 21);
        let w = fit_erm(&data).unwrap().weights;
        // Reaching the first state identifies the pair (first state, stay),
        // so the first row is 0.1 on coordinate one and zero elsewhere.
        let want = [0.1, 0.0, 0.0, 0.0, 0.0];
        for (j, &want_j) in want.iter().enumerate() {
            assert!(
                (w[0][j] - want_j).abs() < 0.01,
                "entry (0, {j}) = {}",
                w[0][j]
            );
        }
        // The other three pairs all feed the second state, weight 1/30 each.
        for c in 1..4 {
            assert!(
                (w[c][1] - 1.0 / 30.0).abs() < 0.01,
                "entry ({c}, 1) = {}",
                w[c][1]
            );
        }
    }

    #[test]
    fn scaled_one_hot_data_is_interpolated_exactly() {
        // x_i = 4 e_i with target e_i: the minimizer is (1/4) I on the
        // populated block.
        let index = PairIndex::new(2, 2, 2);
        let mut data = RegressionDataset::new(index, 4);
        for i in 0..4 {
            let mut x = vec![0.0; 4];
            x[i] = 4.0;
            data.push(x, i / 2, i % 2).unwrap();
        }
        let w = fit_erm(&data).unwrap().weights;
        for c in 0..4 {
            for j in 0..4 {
                let want = if c == j { 0.25 } else { 0.0 };
                assert!((w[c][j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn three_rows_match_hand_solved_normal_equations() {
        let xs = [[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]];
        let index = PairIndex::new(1, 1, 2);
        let mut data = RegressionDataset::new(index, 2);
        data.push(xs[0].to_vec(), 0, 0).unwrap();
        data.push(xs[1].to_vec(), 0, 1).unwrap();
        data.push(xs[2].to_vec(), 0, 0).unwrap();
        let w = fit_erm(&data).unwrap().weights;

        // Independent route: explicit 2x2 inverse of X^T X.
        let ys = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let mut g = [[0.0; 2]; 2];
        let mut b = [[0.0; 2]; 2]; // X^T Y
        for r in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] += xs[r][i] * xs[r][j];
                }
                for c in 0..2 {
                    b[i][c] += xs[r][i] * ys[r][c];
                }
            }
        }
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let ginv = [
            [g[1][1] / det, -g[0][1] / det],
            [-g[1][0] / det, g[0][0] / det],
        ];
        for c in 0..2 {
            for j in 0..2 {
                let want = ginv[j][0] * b[0][c] + ginv[j][1] * b[1][c];
                assert!((w[c][j] - want).abs() < 1e-9, "entry ({c}, {j})");
            }
        }
    }

    #[test]
    fn row_order_does_not_change_the_fit() {
        let data = chain_dataset(500, 5);
        let w1 = fit_erm(&data).unwrap().weights;
        // Rebuild the same rows reversed.
        let mut rev = RegressionDataset::new(data.index, data.context_dim);
        for (x, &t) in data.contexts.iter().zip(&data.targets).rev() {
            let (s, a) = data.index.pair(t);
            rev.push(x.clone(), s, a).unwrap();
        }
        let w2 = fit_erm(&rev).unwrap().weights;
        for (r1, r2) in w1.iter().zip(&w2) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = RegressionDataset::new(PairIndex::new(1, 1, 1), 3);
        assert_eq!(fit_erm(&data).unwrap_err(), ErmError::EmptyDataset);
    }

    #[test]
    fn singular_design_falls_back_to_the_pseudo_inverse() {
        // Only coordinate one is ever populated; the fit must still return
        // finite weights and reproduce the target on that coordinate.
        let index = PairIndex::new(1, 1, 1);
        let mut data = RegressionDataset::new(index, 3);
        for _ in 0..10 {
            data.push(vec![2.0, 0.0, 0.0], 0, 0).unwrap();
        }
        let w = fit_erm(&data).unwrap().weights;
        assert!(w.iter().flatten().all(|v| v.is_finite()));
        assert!((w[0][0] - 0.5).abs() < 1e-9);
        assert_eq!(w[0][1], 0.0);
    }

    #[test]
    fn population_fit_tracks_backward_vectors() {
        // Theorem-style check: with realizable emissions and a large pair
        // sample, predictions land within L1 0.05 of the exact backward
        // vector for every state.
        let model = envs::stochastic_lock(&envs::LockSpec::contextual(6, 5)).unwrap();
        let level = 5;
        let prev = model.states_at(level - 1);
        let index = PairIndex::new(prev, 3, 2);
        let mut data = RegressionDataset::new(index, 5);
        let seeds = SeedStream::new(1234);
        let table = model.table_at(level - 1);
        for ep in 0..100_000u64 {
            let mut rng = seeds.episode_rng(ep);
            let s = rng.random_range(0..prev);
            let a = rng.random_range(0..2usize);
            let u: f64 = rng.random();
            let mut cdf = 0.0;
            let mut s2 = 0;
            for (i, &p) in table[s][a].iter().enumerate() {
                cdf += p;
                if u < cdf {
                    s2 = i;
                    break;
                }
            }
            let x = model.emitter.sample(level, s2, &mut rng);
            data.push(x, s, a).unwrap();
        }
        let embedder = fit_erm(&data).unwrap();
        let nu = uniform_roll_in(&model, level);
        let check = SeedStream::new(4321);
        for s2 in 0..model.states_at(level) {
            let exact = backward_vector_exact(&model, level, &nu, s2, 3).unwrap();
            for ep in 0..20u64 {
                let mut rng = check.episode_rng(s2 as u64 * 100 + ep);
                let x = model.emitter.sample(level, s2, &mut rng);
                let got = embedder.predict(&x).unwrap();
                assert!(l1_distance(&got.coords, &exact.coords) < 0.05, "state {s2}");
            }
        }
    }
}
