use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{delta_cosine, ShiftSeries};
use crate::embed::EmbeddingSnapshot;
use crate::{Error, Result};

const UNKNOWN: &str = "unknown";

/// Category distribution among the strongest cosine shifters at one
/// timestamp, next to the distribution over all eligible nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMix {
    pub t: usize,
    pub n_top: usize,
    pub n_eligible: usize,
    pub top: BTreeMap<String, f64>,
    pub base: BTreeMap<String, f64>,
}

impl CategoryMix {
    pub fn top_fraction(&self, category: &str) -> f64 {
        self.top.get(category).copied().unwrap_or(0.0)
    }

    pub fn base_fraction(&self, category: &str) -> f64 {
        self.base.get(category).copied().unwrap_or(0.0)
    }
}

fn distribution<'a>(ids: impl Iterator<Item = &'a str>, categories: &BTreeMap<String, String>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for id in ids {
        let c = categories.get(id).map(String::as_str).unwrap_or(UNKNOWN);
        *counts.entry(c.to_string()).or_insert(0) += 1;
        n += 1;
    }
    counts
        .into_iter()
        .map(|(c, k)| (c, k as f64 / n.max(1) as f64))
        .collect()
}

/// Category mix of the `n_top` nodes with the largest cosine shift between
/// snapshots `t - 1` and `t`.
///
/// Eligible nodes were updated at `t` with a total pair weight of at least
/// `min_pair_weight` and already existed at `t - 1`. Ties in shift are broken
/// by node id. The base rate is the category mix over all eligible nodes.
pub fn top_shifting_category_mix(
    snapshots: &[EmbeddingSnapshot],
    t: usize,
    n_top: usize,
    categories: &BTreeMap<String, String>,
    min_pair_weight: u64,
) -> Result<CategoryMix> {
    if t == 0 || t >= snapshots.len() {
        return Err(Error::Config(format!(
            "category mix needs 1 <= t < {}, got {t}",
            snapshots.len()
        )));
    }
    let (cur, prev) = (&snapshots[t], &snapshots[t - 1]);
    let mut ranked: Vec<(f64, &str)> = Vec::new();
    for (id, &w) in cur.updated() {
        if w < min_pair_weight {
            continue;
        }
        let (Some(a), Some(b)) = (cur.vector(id), prev.vector(id)) else {
            continue;
        };
        ranked.push((delta_cosine(a, b)?, id.as_str()));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let base = distribution(ranked.iter().map(|r| r.1), categories);
    let n_top = n_top.min(ranked.len());
    let top = distribution(ranked.iter().take(n_top).map(|r| r.1), categories);
    Ok(CategoryMix {
        t,
        n_top,
        n_eligible: ranked.len(),
        top,
        base,
    })
}

/// Mean shift per category at each position of the series' time axis.
pub fn category_mean_series(
    series: &BTreeMap<String, ShiftSeries>,
    categories: &BTreeMap<String, String>,
) -> BTreeMap<String, Vec<Option<f64>>> {
    let len = series.values().map(|s| s.values.len()).max().unwrap_or(0);
    let mut sums: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for (id, s) in series {
        let c = categories.get(id).map(String::as_str).unwrap_or(UNKNOWN);
        let acc = sums.entry(c.to_string()).or_insert_with(|| vec![(0.0, 0); len]);
        for (i, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                acc[i].0 += v;
                acc[i].1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(c, acc)| {
            let means = acc
                .into_iter()
                .map(|(s, n)| (n > 0).then(|| s / n as f64))
                .collect();
            (c, means)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snaps(shifts: &[(&str, f64)]) -> Vec<EmbeddingSnapshot> {
        let s0 = EmbeddingSnapshot::from_rows(0, 2, shifts.iter().map(|(id, _)| (*id, vec![1.0, 0.0]))).unwrap();
        let mut s1 = EmbeddingSnapshot::from_rows(
            1,
            2,
            shifts.iter().map(|(id, angle)| (*id, vec![angle.cos(), angle.sin()])),
        )
        .unwrap();
        s1.set_updated(shifts.iter().map(|(id, _)| (id.to_string(), 20)).collect());
        vec![s0, s1]
    }

    fn cats() -> BTreeMap<String, String> {
        [("a", "x"), ("b", "x"), ("c", "y"), ("d", "y"), ("e", "y")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn uniform_shift_matches_base_rate() {
        let s = snaps(&[("a", 0.3), ("b", 0.3), ("c", 0.3), ("d", 0.3), ("e", 0.3)]);
        let m = top_shifting_category_mix(&s, 1, 5, &cats(), 10).unwrap();
        assert_eq!(m.top, m.base);
    }

    #[test]
    fn shocked_category_overrepresented() {
        let s = snaps(&[("a", 1.0), ("b", 0.9), ("c", 0.1), ("d", 0.05), ("e", 0.2)]);
        let m = top_shifting_category_mix(&s, 1, 2, &cats(), 10).unwrap();
        assert_eq!(m.top_fraction("x"), 1.0);
        assert!((m.base_fraction("x") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn n_top_beyond_population_is_base_rate() {
        let s = snaps(&[("a", 1.0), ("b", 0.9), ("c", 0.1), ("d", 0.05), ("e", 0.2)]);
        let m = top_shifting_category_mix(&s, 1, 100, &cats(), 10).unwrap();
        assert_eq!(m.top, m.base);
        assert_eq!(m.n_top, 5);
    }

    #[test]
    fn trimming_by_pair_weight() {
        let s = snaps(&[("a", 1.0), ("b", 0.9)]);
        let m = top_shifting_category_mix(&s, 1, 1, &cats(), 21).unwrap();
        assert_eq!(m.n_eligible, 0);
        assert!(m.top.is_empty());
    }
}
