use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sgns::sigmoid;
use super::EmbeddingSnapshot;
use crate::graph::PairMultiset;
use crate::{derive_seed, Error, Result};

/// How positive pairs are scheduled within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visitation {
    /// Each pair is visited `min(count, max_pair_visits)` times, in shuffled order.
    Exact,
    /// The same number of visits, drawn with probability proportional to count.
    Subsampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    /// Negative samples drawn per positive.
    pub negatives: usize,
    pub epochs: usize,
    /// Initial step size, decayed linearly to `min_learning_rate` over the snapshot.
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Exponent applied to node pair weights for the negative-sampling distribution.
    pub ns_exponent: f64,
    /// Pair counts above this are capped when scheduling visits.
    pub max_pair_visits: u64,
    pub visitation: Visitation,
    pub rng_seed: u64,
    /// 1 runs the deterministic sequential trainer; anything else the
    /// lock-free parallel one (0 = every available thread).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            ns_exponent: 0.75,
            max_pair_visits: 1000,
            visitation: Visitation::Exact,
            rng_seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.negatives < 1 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=self.learning_rate).contains(&self.min_learning_rate) {
            return Err(Error::Config("min_learning_rate must lie in [0, learning_rate]".into()));
        }
        if !self.ns_exponent.is_finite() {
            return Err(Error::Config("ns_exponent must be finite".into()));
        }
        if self.max_pair_visits == 0 {
            return Err(Error::Config("max_pair_visits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Directed (center, context) visits, as rows into the snapshot tables.
type Visit = (u32, u32);

struct Plan {
    /// Local node index → snapshot row.
    rows: Vec<u32>,
    pairs: Vec<(u32, u32, u64)>,
    negative_dist: WeightedIndex<f64>,
    visits_per_epoch: usize,
}

impl Plan {
    fn schedule(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Visit> {
        let mut out = Vec::with_capacity(self.visits_per_epoch);
        match cfg.visitation {
            Visitation::Exact => {
                for &(a, b, c) in &self.pairs {
                    for _ in 0..c.min(cfg.max_pair_visits) {
                        out.push((a, b));
                        out.push((b, a));
                    }
                }
                out.shuffle(rng);
            }
            Visitation::Subsampled => {
                let dist = WeightedIndex::new(self.pairs.iter().map(|p| p.2 as f64))
                    .expect("pairs have positive counts");
                while out.len() < self.visits_per_epoch {
                    let (a, b, _) = self.pairs[dist.sample(rng)];
                    out.push((a, b));
                    out.push((b, a));
                }
            }
        }
        out
    }

    fn negative(&self, rng: &mut impl Rng) -> u32 {
        self.rows[self.negative_dist.sample(rng)]
    }
}

/// One SGNS step for a directed visit: positive `target`, then negatives.
#[inline]
#[allow(clippy::too_many_arguments)]
fn sgd_visit(
    input: &mut [f64],
    ctx: &mut [f64],
    d: usize,
    center: usize,
    target: usize,
    negatives: &[u32],
    lr: f64,
    grad: &mut [f64],
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let c = &input[center * d..(center + 1) * d];
    let targets = std::iter::once((target, 1.0)).chain(
        negatives
            .iter()
            .filter(|&&n| n as usize != target)
            .map(|&n| (n as usize, 0.0)),
    );
    for (o, label) in targets {
        let u = &mut ctx[o * d..(o + 1) * d];
        let f: f64 = c.iter().zip(u.iter()).map(|(x, y)| x * y).sum();
        let g = (label - sigmoid(f)) * lr;
        for k in 0..d {
            grad[k] += g * u[k];
            u[k] += g * c[k];
        }
    }
    for (x, g) in input[center * d..(center + 1) * d].iter_mut().zip(grad.iter()) {
        *x += g;
    }
}

fn learning_rate(cfg: &TrainConfig, done: usize, total: usize) -> f64 {
    let progress = if total == 0 { 0.0 } else { done as f64 / total as f64 };
    (cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * progress).max(cfg.min_learning_rate)
}

fn train_sequential(snap: &mut EmbeddingSnapshot, plan: &Plan, cfg: &TrainConfig, rng: &mut ChaCha8Rng) {
    let d = snap.dim();
    let total = plan.visits_per_epoch * cfg.epochs;
    let mut grad = vec![0.0; d];
    let mut negs = vec![0u32; cfg.negatives];
    let mut done = 0usize;
    let (input, ctx) = snap.tables_mut();
    for _ in 0..cfg.epochs {
        let visits = plan.schedule(cfg, rng);
        for &(c, o) in &visits {
            for n in negs.iter_mut() {
                *n = plan.negative(rng);
            }
            let lr = learning_rate(cfg, done, total);
            sgd_visit(input, ctx, d, c as usize, o as usize, &negs, lr, &mut grad);
            done += 1;
        }
    }
}

#[cfg(feature = "parallel")]
fn train_hogwild(snap: &mut EmbeddingSnapshot, plan: &Plan, cfg: &TrainConfig, rng: &mut ChaCha8Rng) {
    use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

    use rayon::prelude::*;

    let d = snap.dim();
    let total = plan.visits_per_epoch * cfg.epochs;
    let (input, ctx) = snap.tables_mut();
    let to_atomic = |t: &[f64]| t.iter().map(|x| AtomicU64::new(x.to_bits())).collect::<Vec<_>>();
    let shared_in = to_atomic(input);
    let shared_ctx = to_atomic(ctx);
    let workers = rayon::current_num_threads().max(1);

    for epoch in 0..cfg.epochs {
        let visits = plan.schedule(cfg, rng);
        let epoch_seed = rng.random::<u64>();
        let chunk = visits.len().div_ceil(workers).max(1);
        visits.par_chunks(chunk).enumerate().for_each(|(ci, part)| {
            let mut local = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, ci as u64));
            let mut c = vec![0.0; d];
            let mut u = vec![0.0; d];
            let mut grad = vec![0.0; d];
            let load = |t: &[AtomicU64], row: usize, out: &mut [f64]| {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = f64::from_bits(t[row * d + k].load(Relaxed));
                }
            };
            for (i, &(center, target)) in part.iter().enumerate() {
                // Global progress estimate: chunks advance in lockstep on average.
                let done = epoch * visits.len() + i * workers;
                let lr = learning_rate(cfg, done.min(total), total);
                let (center, target) = (center as usize, target as usize);
                load(&shared_in, center, &mut c);
                grad.iter_mut().for_each(|g| *g = 0.0);
                for j in 0..=cfg.negatives {
                    let (o, label) = if j == 0 {
                        (target, 1.0)
                    } else {
                        let n = plan.negative(&mut local) as usize;
                        if n == target {
                            continue;
                        }
                        (n, 0.0)
                    };
                    load(&shared_ctx, o, &mut u);
                    let f: f64 = c.iter().zip(&u).map(|(x, y)| x * y).sum();
                    let g = (label - sigmoid(f)) * lr;
                    for k in 0..d {
                        grad[k] += g * u[k];
                        shared_ctx[o * d + k].store((u[k] + g * c[k]).to_bits(), Relaxed);
                    }
                }
                for k in 0..d {
                    let cell = &shared_in[center * d + k];
                    let cur = f64::from_bits(cell.load(Relaxed));
                    cell.store((cur + grad[k]).to_bits(), Relaxed);
                }
            }
        });
    }

    for (x, a) in input.iter_mut().zip(&shared_in) {
        *x = f64::from_bits(a.load(Relaxed));
    }
    for (x, a) in ctx.iter_mut().zip(&shared_ctx) {
        *x = f64::from_bits(a.load(Relaxed));
    }
}

/// Train one snapshot, warm-started from `prev`.
///
/// Nodes of `pairs` missing from `prev` get a fresh uniform initialization in
/// `[-0.5/d, 0.5/d)` with zero context vectors; every other node of `prev` is
/// carried over untouched. Negatives are drawn only from this snapshot's
/// nodes, so input vectors of nodes absent from `pairs` never change.
pub fn train_snapshot(
    pairs: &PairMultiset,
    prev: Option<&EmbeddingSnapshot>,
    cfg: &TrainConfig,
) -> Result<EmbeddingSnapshot> {
    cfg.validate()?;
    if let Some(p) = prev {
        if p.dim() != cfg.dim {
            return Err(Error::Config(format!(
                "dimension mismatch: previous snapshot has dim {}, config has {}",
                p.dim(),
                cfg.dim
            )));
        }
    }
    let t = pairs.window.index;
    let mut snap = prev.cloned().unwrap_or_else(|| EmbeddingSnapshot::new(t, cfg.dim));
    snap.timestamp_index = t;
    snap.smoothed = false;
    snap.set_updated(BTreeMap::new());
    snap.ensure_context();
    if pairs.is_empty() {
        return Ok(snap);
    }

    let d = cfg.dim;
    let weights = pairs.node_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, t as u64));
    let bound = 0.5 / d as f64;
    for id in weights.keys() {
        if !snap.contains(id) {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-bound..bound)).collect();
            snap.push(id.clone(), &v, None)?;
        }
    }

    let local: BTreeMap<&str, u32> = weights
        .keys()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect();
    let rows: Vec<u32> = weights
        .keys()
        .map(|id| snap.index_of(id).expect("node inserted above") as u32)
        .collect();
    let pair_list: Vec<(u32, u32, u64)> = pairs
        .iter()
        .map(|(a, b, c)| (rows[local[a] as usize], rows[local[b] as usize], c))
        .collect();
    let negative_dist = WeightedIndex::new(weights.values().map(|&w| (w as f64).powf(cfg.ns_exponent)))
        .map_err(|e| Error::Numerical(format!("negative-sampling distribution: {e}")))?;
    let visits_per_epoch = 2 * pair_list
        .iter()
        .map(|p| p.2.min(cfg.max_pair_visits) as usize)
        .sum::<usize>();
    let plan = Plan {
        rows,
        pairs: pair_list,
        negative_dist,
        visits_per_epoch,
    };

    #[cfg(feature = "parallel")]
    {
        if cfg.threads == 1 {
            train_sequential(&mut snap, &plan, cfg, &mut rng);
        } else {
            crate::par::with_threads(cfg.threads, || train_hogwild(&mut snap, &plan, cfg, &mut rng));
        }
    }
    #[cfg(not(feature = "parallel"))]
    train_sequential(&mut snap, &plan, cfg, &mut rng);

    if let Some(bad) = snap.input_table().iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite embedding component for node `{}`; lower the learning rate",
            snap.ids()[bad / d]
        )));
    }
    snap.set_updated(weights);
    Ok(snap)
}

/// Fold [`train_snapshot`] over chronologically ordered pair multisets.
pub fn chain_train(pair_sequence: &[PairMultiset], cfg: &TrainConfig) -> Result<Vec<EmbeddingSnapshot>> {
    if let Some(first) = pair_sequence.first() {
        if let Some(p) = pair_sequence.iter().find(|p| p.node_type != first.node_type) {
            return Err(Error::Data(format!(
                "window {}: node type {} differs from {}",
                p.window.index, p.node_type, first.node_type
            )));
        }
    }
    if let Some(w) = pair_sequence.windows(2).find(|w| w[1].window.start < w[0].window.start) {
        return Err(Error::Data(format!(
            "window {}: pair multisets are not in chronological order",
            w[1].window.index
        )));
    }
    let mut out: Vec<EmbeddingSnapshot> = Vec::with_capacity(pair_sequence.len());
    for pairs in pair_sequence {
        let snap = train_snapshot(pairs, out.last(), cfg)
            .map_err(|e| e.context(format!("window {}", pairs.window.index)))?;
        log::debug!(
            "window {}: {} nodes, {} updated",
            pairs.window.index,
            snap.len(),
            snap.updated().len()
        );
        out.push(snap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;
    use crate::embed::cosine_similarity;
    use crate::graph::{NodeType, SnapshotWindow};

    fn pairs(index: usize, list: &[(&str, &str, u64)]) -> PairMultiset {
        let start = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap() + chrono::Months::new(index as u32);
        let w = SnapshotWindow {
            index,
            start,
            end: start + chrono::Months::new(1),
        };
        let mut p = PairMultiset::new(w, NodeType::Merchant);
        for (a, b, c) in list {
            p.add(a, b, *c);
        }
        p
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            rng_seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_pairs_return_prev() {
        let first = train_snapshot(
            &pairs(0, &[("a", "b", 2), ("c", "d", 1), ("a", "e", 1)]),
            None,
            &cfg(),
        )
        .unwrap();
        assert_eq!(first.len(), 5);
        let next = train_snapshot(&pairs(1, &[]), Some(&first), &cfg()).unwrap();
        assert_eq!(next.input_table(), first.input_table());
        assert!(next.updated().is_empty());
        assert_eq!(next.timestamp_index, 1);
    }

    #[test]
    fn cold_start_three_nodes() {
        let s = train_snapshot(&pairs(0, &[("a", "b", 1), ("b", "c", 1)]), None, &cfg()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.updated().len(), 3);
        assert!(s.input_table().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let s = train_snapshot(&pairs(0, &[("a", "b", 1)]), None, &cfg()).unwrap();
        let other = TrainConfig { dim: 4, ..cfg() };
        let err = train_snapshot(&pairs(1, &[("a", "b", 1)]), Some(&s), &other).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_config_rejected() {
        for bad in [
            TrainConfig { dim: 1, ..cfg() },
            TrainConfig { negatives: 0, ..cfg() },
            TrainConfig { learning_rate: 0.0, ..cfg() },
        ] {
            assert!(train_snapshot(&pairs(0, &[("a", "b", 1)]), None, &bad).is_err());
        }
    }

    #[test]
    fn single_window_chain_equals_cold_start() {
        let p = pairs(0, &[("a", "b", 3), ("b", "c", 1)]);
        let chained = chain_train(std::slice::from_ref(&p), &cfg()).unwrap();
        let direct = train_snapshot(&p, None, &cfg()).unwrap();
        assert_eq!(chained, vec![direct]);
    }

    #[test]
    fn deterministic_with_same_seed() {
        let seq = [
            pairs(0, &[("a", "b", 3), ("b", "c", 1), ("c", "d", 2)]),
            pairs(1, &[("a", "c", 2), ("d", "e", 1)]),
        ];
        let x = chain_train(&seq, &cfg()).unwrap();
        let y = chain_train(&seq, &cfg()).unwrap();
        assert_eq!(x, y);
        let z = chain_train(&seq, &TrainConfig { rng_seed: 12, ..cfg() }).unwrap();
        assert_ne!(x[1].input_table(), z[1].input_table());
    }

    #[test]
    fn subsampled_mode_keeps_invariants() {
        let c = TrainConfig {
            visitation: Visitation::Subsampled,
            ..cfg()
        };
        let seq = [
            pairs(0, &[("a", "b", 30), ("c", "d", 1), ("x", "y", 2)]),
            pairs(1, &[("a", "b", 2), ("b", "c", 4)]),
        ];
        let s = chain_train(&seq, &c).unwrap();
        assert_eq!(s[1].vector("x"), s[0].vector("x"));
        assert_eq!(s[1].len(), 6);
    }

    #[test]
    fn disjoint_cliques_separate() {
        let p = pairs(0, &[("A", "B", 50), ("C", "D", 50)]);
        let c = TrainConfig {
            dim: 8,
            epochs: 40,
            ..cfg()
        };
        let s = train_snapshot(&p, None, &c).unwrap();
        let ab = cosine_similarity(s.vector("A").unwrap(), s.vector("B").unwrap());
        let ac = cosine_similarity(s.vector("A").unwrap(), s.vector("C").unwrap());
        assert!(ab > ac, "cos(A,B)={ab} cos(A,C)={ac}");
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn hogwild_keeps_frozen_nodes() {
        let c = TrainConfig { threads: 4, ..cfg() };
        let seq = [
            pairs(0, &[("a", "b", 30), ("c", "d", 10), ("x", "y", 2)]),
            pairs(1, &[("a", "b", 20), ("b", "c", 40)]),
        ];
        let s = chain_train(&seq, &c).unwrap();
        assert_eq!(s[1].vector("x"), s[0].vector("x"));
        assert_eq!(s[1].vector("d"), s[0].vector("d"));
        assert!(s[1].input_table().iter().all(|x| x.is_finite()));
    }
}
