use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingSnapshot};
use crate::{par, Error, Result};

/// Ranked cosine neighbors of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSnapshot {
    pub node_id: String,
    pub timestamp_index: usize,
    pub k: usize,
    /// `(neighbor, cosine similarity)`, most similar first.
    pub neighbors: Vec<(String, f64)>,
}

/// Exact brute-force cosine neighbor search over one snapshot.
pub struct NeighborIndex<'a> {
    snapshot: &'a EmbeddingSnapshot,
    unit: Vec<f64>,
    /// Position of each row's id in sorted id order, for tie-breaking.
    id_rank: Vec<u32>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(snapshot: &'a EmbeddingSnapshot) -> Self {
        let d = snapshot.dim();
        let mut unit = Vec::with_capacity(snapshot.len() * d);
        for i in 0..snapshot.len() {
            let v = snapshot.row(i);
            let n = dot(v, v).sqrt();
            if n > 0.0 {
                unit.extend(v.iter().map(|x| x / n));
            } else {
                unit.extend(std::iter::repeat(0.0).take(d));
            }
        }
        let mut order: Vec<usize> = (0..snapshot.len()).collect();
        order.sort_by(|&a, &b| snapshot.ids()[a].cmp(&snapshot.ids()[b]));
        let mut id_rank = vec![0u32; snapshot.len()];
        for (r, i) in order.into_iter().enumerate() {
            id_rank[i] = r as u32;
        }
        Self {
            snapshot,
            unit,
            id_rank,
        }
    }

    pub fn snapshot(&self) -> &EmbeddingSnapshot {
        self.snapshot
    }

    fn unit_row(&self, i: usize) -> &[f64] {
        let d = self.snapshot.dim();
        &self.unit[i * d..(i + 1) * d]
    }

    /// Top-`k` rows by cosine similarity to row `i`, excluding `i`; ties are
    /// broken by node id.
    pub fn topk_row(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        let q = self.unit_row(i);
        let mut cand: Vec<(usize, f64)> = (0..self.snapshot.len())
            .filter(|&j| j != i)
            .map(|j| (j, dot(q, self.unit_row(j))))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.id_rank[a.0].cmp(&self.id_rank[b.0]))
        };
        if k == 0 {
            return Vec::new();
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        cand
    }

    /// Top-`k` row lists for every row.
    pub fn all_topk(&self, k: usize) -> Vec<Vec<usize>> {
        par::map_range(self.snapshot.len(), |i| {
            self.topk_row(i, k).into_iter().map(|(j, _)| j).collect()
        })
    }
}

/// Exact top-`k` cosine neighbors of `node_id`, excluding itself. Returns
/// every other node when `k` exceeds their number.
pub fn topk_neighbors(snapshot: &EmbeddingSnapshot, node_id: &str, k: usize) -> Result<NeighborhoodSnapshot> {
    let i = snapshot
        .index_of(node_id)
        .ok_or_else(|| Error::Data(format!("unknown node `{node_id}`")))?;
    let index = NeighborIndex::new(snapshot);
    let neighbors = index
        .topk_row(i, k)
        .into_iter()
        .map(|(j, s)| (snapshot.ids()[j].clone(), s))
        .collect();
    Ok(NeighborhoodSnapshot {
        node_id: node_id.to_string(),
        timestamp_index: snapshot.timestamp_index,
        k,
        neighbors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub t: usize,
    pub k: usize,
    pub delta_t: usize,
    /// Mean normalized intersection size, in `[0, 1]`.
    pub overlap: f64,
    /// Nodes averaged over.
    pub nodes: usize,
}

/// Mean over nodes present at both `t - delta_t` and `t` of
/// `|topk_t ∩ topk_{t-δt}| / |topk_{t-δt}|`, for every `t >= delta_t`.
pub fn neighborhood_overlap(snapshots: &[EmbeddingSnapshot], k: usize, delta_t: usize) -> Result<Vec<OverlapPoint>> {
    overlap_grid(snapshots, &[k], &[delta_t])
}

/// [`neighborhood_overlap`] for every `(k, delta_t)` combination, sharing one
/// neighbor search per snapshot. Output is ordered by `(t, k, delta_t)`.
pub fn overlap_grid(snapshots: &[EmbeddingSnapshot], ks: &[usize], deltas: &[usize]) -> Result<Vec<OverlapPoint>> {
    if deltas.contains(&0) {
        return Err(Error::Config("delta_t must be >= 1".into()));
    }
    let Some(&kmax) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    let tops: Vec<Vec<Vec<usize>>> = snapshots
        .iter()
        .map(|s| NeighborIndex::new(s).all_topk(kmax))
        .collect();

    let mut out = Vec::new();
    for t in 0..snapshots.len() {
        let cur = &snapshots[t];
        for &k in ks {
            for &dt in deltas {
                if t < dt {
                    continue;
                }
                let prev = &snapshots[t - dt];
                let shared: Vec<(usize, usize)> = prev
                    .ids()
                    .iter()
                    .enumerate()
                    .filter_map(|(ip, id)| cur.index_of(id).map(|ic| (ip, ic)))
                    .collect();
                let ratios: Vec<Option<f64>> = par::map(&shared, |&(ip, ic)| {
                    let before: HashSet<&str> = tops[t - dt][ip]
                        .iter()
                        .take(k)
                        .map(|&j| prev.ids()[j].as_str())
                        .collect();
                    if before.is_empty() {
                        return None;
                    }
                    let hits = tops[t][ic]
                        .iter()
                        .take(k)
                        .filter(|&&j| before.contains(cur.ids()[j].as_str()))
                        .count();
                    Some(hits as f64 / before.len() as f64)
                });
                let vals: Vec<f64> = ratios.into_iter().flatten().collect();
                if vals.is_empty() {
                    continue;
                }
                out.push(OverlapPoint {
                    t,
                    k,
                    delta_t: dt,
                    overlap: vals.iter().sum::<f64>() / vals.len() as f64,
                    nodes: vals.len(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::embed::cosine_similarity;

    fn random_snapshot(t: usize, n: usize, d: usize, seed: u64) -> EmbeddingSnapshot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSnapshot::from_rows(
            t,
            d,
            (0..n).map(|i| (format!("n{i:03}"), (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())),
        )
        .unwrap()
    }

    #[test]
    fn near_duplicate_ranks_first() {
        let s = EmbeddingSnapshot::from_rows(
            0,
            2,
            [("q", vec![1.0, 0.0]), ("dup", vec![1.0, 1e-6]), ("far", vec![0.0, 1.0])],
        )
        .unwrap();
        let nb = topk_neighbors(&s, "q", 1).unwrap();
        assert_eq!(nb.neighbors[0].0, "dup");
        assert!((nb.neighbors[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_beyond_population() {
        let s = random_snapshot(0, 6, 3, 1);
        let nb = topk_neighbors(&s, "n000", 50).unwrap();
        assert_eq!(nb.neighbors.len(), 5);
        assert!(nb.neighbors.iter().all(|(id, _)| id != "n000"));
        assert!(nb.neighbors.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn unknown_node() {
        let s = random_snapshot(0, 4, 3, 1);
        assert!(topk_neighbors(&s, "nope", 2).is_err());
    }

    #[test]
    fn ties_broken_by_id() {
        let s = EmbeddingSnapshot::from_rows(
            0,
            2,
            [("q", vec![1.0, 0.0]), ("c", vec![0.0, 1.0]), ("b", vec![0.0, 2.0]), ("a", vec![0.0, 3.0])],
        )
        .unwrap();
        let ids: Vec<String> = topk_neighbors(&s, "q", 3).unwrap().neighbors.into_iter().map(|x| x.0).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn matches_brute_force_on_random_space() {
        let s = random_snapshot(0, 50, 8, 42);
        for q in s.ids() {
            let got: HashSet<String> = topk_neighbors(&s, q, 10).unwrap().neighbors.into_iter().map(|x| x.0).collect();
            // O(N²) oracle: full sort of raw cosine similarities.
            let mut all: Vec<(f64, &String)> = s
                .ids()
                .iter()
                .filter(|o| *o != q)
                .map(|o| (cosine_similarity(s.vector(q).unwrap(), s.vector(o).unwrap()), o))
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            let want: HashSet<String> = all.iter().take(10).map(|x| x.1.clone()).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn identical_snapshots_overlap_fully() {
        let a = random_snapshot(0, 20, 4, 3);
        let mut b = a.clone();
        b.timestamp_index = 1;
        let pts = neighborhood_overlap(&[a, b], 5, 1).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].overlap, 1.0);
        assert_eq!(pts[0].nodes, 20);
    }

    #[test]
    fn grid_shape() {
        let snaps: Vec<_> = (0..6).map(|t| random_snapshot(t, 30, 4, t as u64)).collect();
        let pts = overlap_grid(&snaps, &[10, 50, 100], &[2, 3, 4]).unwrap();
        let curves: HashSet<(usize, usize)> = pts.iter().map(|p| (p.k, p.delta_t)).collect();
        assert_eq!(curves.len(), 9);
        assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.overlap)));
    }

    #[test]
    fn independent_spaces_overlap_near_chance() {
        // Monte-Carlo oracle: for unrelated embeddings the expected overlap
        // is k / (N - 1).
        let (n, k, trials) = (200, 10, 1000);
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_snapshot(0, n, 4, 100);
        let idx_a = NeighborIndex::new(&a);
        let top_a = idx_a.all_topk(k);
        let mut b = random_snapshot(1, n, 4, 101);
        let idx_b_top = NeighborIndex::new(&b).all_topk(k);
        for _ in 0..trials {
            let i = rng.random_range(0..n);
            let before: HashSet<usize> = top_a[i].iter().copied().collect();
            total += idx_b_top[i].iter().filter(|j| before.contains(j)).count() as f64 / k as f64;
        }
        let mc = total / trials as f64;
        let expect = k as f64 / (n - 1) as f64;
        assert!((mc - expect).abs() < 0.02, "mc={mc} expect={expect}");
        b.timestamp_index = 1;
        let exact = neighborhood_overlap(&[a, b], k, 1).unwrap()[0].overlap;
        assert!((exact - expect).abs() < 0.02, "exact={exact}");
    }
}
