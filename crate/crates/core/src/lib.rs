//! Exploration in block MDPs by latent-state decoding.
//!
//! A block MDP is an episodic, layered MDP with a small hidden state space
//! whose states emit rich observations ("contexts") from disjoint supports.
//! This crate implements the PCID family of algorithms, which recover the
//! hidden state structure level by level: contexts are regressed onto
//! one-hot encodings of the previous (state, action) pair, the resulting
//! embeddings (backward probability vectors) are clustered into latent
//! states, and dynamic programming over the estimated latent transitions
//! produces a policy cover: one policy per state, each reaching its state
//! with near-maximal probability.
//!
//! Module map:
//!
//! * [`bmdp`]: ground-truth model, trajectory simulation, policy algebra,
//!   and exact dynamic-programming oracles.
//! * [`embedding`]: backward probability vectors, the least-squares
//!   regression oracle over the linear class, and separability diagnostics.
//! * [`clustering`]: greedy threshold clustering, the nearest-center
//!   decoder, and k-means with a minimum cluster size.
//! * [`pcid`]: the stochastic and deterministic cover-learning loops,
//!   transition estimation, reachability planning, and reward planning.
//! * [`envs`]: combination-lock benchmark environments and a random
//!   model generator.
//! * [`harness`]: diagnostics against simulator ground truth, a tabular
//!   Q-learning baseline, and the CSV experiment runner.

pub mod bmdp;
pub mod clustering;
pub mod embedding;
pub mod envs;
pub mod harness;
pub mod pcid;
pub mod rng;

pub use bmdp::{BmdpModel, ContextPolicy, LatentPolicy, PolicyMixture, Trajectory};
pub use clustering::{ClusterSet, Decoder};
pub use embedding::{Embedding, LinearEmbedder, PairIndex, RegressionDataset};
pub use pcid::{LearnedModel, PcidConfig};
pub use rng::SeedStream;
