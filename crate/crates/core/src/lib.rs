//! Temporally chained node embeddings for dynamic bipartite transaction
//! graphs, plus the tooling to measure, smooth and forecast how those
//! embeddings drift from one snapshot to the next.
//!
//! The pipeline, bottom-up:
//!
//! - [`graph`]: ingest timestamped account/merchant transactions, cut them
//!   into snapshot windows and project each window onto one node type as a
//!   weighted pair multiset (length-2 walks through bridge nodes).
//! - [`embed`]: skip-gram with negative sampling trained per snapshot, each
//!   snapshot warm-started from the previous one.
//! - [`shift`]: magnitude/cosine shift, max-shift attribution, exact top-k
//!   neighborhoods and their overlap across time.
//! - [`trajectory`]: per-dimension constant-velocity Kalman smoothing with
//!   EM-fitted noise, and velocity vectors.
//! - [`forecast`]: an LSTM regressor for next-step cosine shift against a
//!   moving-average baseline.
//! - [`synthgen`]: a synthetic transaction world with seasonality, churn and
//!   injectable category shocks.
//! - [`pipeline`]: file-based stages with manifests tying it all together.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod embed;
pub mod error;
pub mod forecast;
pub mod graph;
pub mod par;
pub mod pipeline;
pub mod shift;
pub mod synthgen;
pub mod trajectory;

pub use error::{Error, Result};

/// Derive an independent RNG seed for a sub-stream (window, month, chunk)
/// from a base seed. SplitMix64 finalizer over the combined value.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
