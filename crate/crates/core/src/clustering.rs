//! Clustering of embedding points and the nearest-center decoder.
//!
//! The greedy threshold pass scans points in input order: the first
//! unclaimed point becomes a center and claims everything within L1
//! distance tau. Centers are actual data points, and the scan order is the
//! episode order, which keeps runs reproducible. Decoding maps a context to
//! the L1-nearest center of its predicted embedding, ties toward the lowest
//! center id. The k-means variant (squared Euclidean, Lloyd iterations,
//! farthest-point seeding) decrements k until every cluster holds at least
//! `min_size` points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{l1_distance, Embedding, EmbeddingError, LinearEmbedder};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub centers: Vec<Embedding>,
    /// Cluster id per input point.
    pub assignments: Vec<usize>,
    /// Threshold used by the greedy pass; `None` for k-means output.
    pub threshold: Option<f64>,
}

impl ClusterSet {
    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    /// Index of the input point serving as a greedy center. Centers are
    /// created in scan order, so it is the first point assigned to the
    /// cluster.
    pub fn center_point(&self, cluster: usize) -> Option<usize> {
        self.assignments.iter().position(|&c| c == cluster)
    }
}

/// Greedy threshold clustering in input order.
pub fn threshold_cluster(points: &[Embedding], threshold: f64) -> Result<ClusterSet, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let mut assignments = vec![usize::MAX; points.len()];
    let mut centers = Vec::new();
    for i in 0..points.len() {
        if assignments[i] != usize::MAX {
            continue;
        }
        let cluster = centers.len();
        assignments[i] = cluster;
        for j in i + 1..points.len() {
            if assignments[j] == usize::MAX
                && l1_distance(&points[i].coords, &points[j].coords) <= threshold
            {
                assignments[j] = cluster;
            }
        }
        centers.push(points[i].clone());
    }
    Ok(ClusterSet {
        centers,
        assignments,
        threshold: Some(threshold),
    })
}

/// L1-nearest center, ties toward the lowest index.
pub fn nearest_center(centers: &[Embedding], point: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = l1_distance(&c.coords, point);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Context decoder: embed, then take the L1-nearest learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DecoderFile", into = "DecoderFile")]
pub struct Decoder {
    pub embedder: LinearEmbedder,
    pub centers: Vec<Embedding>,
}

impl Decoder {
    pub fn num_states(&self) -> usize {
        self.centers.len()
    }

    pub fn decode(&self, context: &[f64]) -> Result<usize, EmbeddingError> {
        let e = self.embedder.predict(context)?;
        Ok(nearest_center(&self.centers, &e.coords))
    }
}

#[derive(Serialize, Deserialize)]
struct DecoderFile {
    embedder: LinearEmbedder,
    centers: Vec<Vec<f64>>,
}

impl From<Decoder> for DecoderFile {
    fn from(d: Decoder) -> Self {
        DecoderFile {
            centers: d.centers.iter().map(|c| c.coords.clone()).collect(),
            embedder: d.embedder,
        }
    }
}

impl TryFrom<DecoderFile> for Decoder {
    type Error = String;

    fn try_from(f: DecoderFile) -> Result<Self, Self::Error> {
        let dim = f.embedder.index.dim();
        if f.centers.iter().any(|c| c.len() != dim) {
            return Err("center dimension does not match the embedder".into());
        }
        let index = f.embedder.index;
        Ok(Decoder {
            centers: f
                .centers
                .into_iter()
                .map(|coords| Embedding { coords, index })
                .collect(),
            embedder: f.embedder,
        })
    }
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Embedding], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].coords.len();
    // Farthest-point seeding from the first input point.
    let mut centers: Vec<Vec<f64>> = vec![points[0].coords.clone()];
    while centers.len() < k {
        let mut far = 0usize;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| sq_euclidean(c, &p.coords))
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        centers.push(points[far].coords.clone());
    }
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_euclidean(center, &p.coords);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Embedding> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue; // keep the previous center
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                for (j, v) in m.coords.iter().enumerate() {
                    mean[j] += v;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            *center = mean;
        }
    }
    (centers, assignments)
}

/// Default minimum cluster size for [`kmeans_with_min_size`].
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 30;

/// Lloyd k-means that decrements k until every cluster has at least
/// `min_size` points (k = 1 always terminates).
pub fn kmeans_with_min_size(
    points: &[Embedding],
    k_max: usize,
    min_size: usize,
) -> Result<ClusterSet, ClusterError> {
    if points.is_empty() || k_max == 0 {
        return Err(ClusterError::EmptyInput);
    }
    let index = points[0].index;
    let mut k = k_max.min(points.len());
    loop {
        let (centers, assignments) = lloyd(points, k);
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        if k == 1 || sizes.iter().all(|&s| s >= min_size) {
            return Ok(ClusterSet {
                centers: centers
                    .into_iter()
                    .map(|coords| Embedding { coords, index })
                    .collect(),
                assignments,
                threshold: None,
            });
        }
        k -= 1;
    }
}
