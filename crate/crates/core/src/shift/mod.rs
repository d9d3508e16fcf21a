//! Shift statistics between embedding snapshots.

mod category;
mod csv_out;
mod neighbors;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use category::{category_mean_series, top_shifting_category_mix, CategoryMix};
pub use csv_out::{read_series_csv, write_histogram_csv, write_mix_csv, write_overlap_csv, write_series_csv};
pub use neighbors::{
    neighborhood_overlap, overlap_grid, topk_neighbors, NeighborIndex, NeighborhoodSnapshot, OverlapPoint,
};

use crate::embed::{dot, EmbeddingSnapshot};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Magnitude,
    Cosine,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Magnitude => "magnitude",
            Metric::Cosine => "cosine",
        })
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Euclidean distance `‖current - previous‖₂`.
pub fn delta_magnitude(current: &[f64], previous: &[f64]) -> Result<f64> {
    check_dims(current, previous)?;
    Ok(current
        .iter()
        .zip(previous)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Cosine distance `1 - cos(current, previous)`, in `[0, 2]`.
///
/// Bit-identical vectors give exactly 0.
pub fn delta_cosine(current: &[f64], previous: &[f64]) -> Result<f64> {
    check_dims(current, previous)?;
    if current == previous {
        if current.iter().all(|&x| x == 0.0) {
            return Err(Error::Numerical("cosine shift of a zero vector".into()));
        }
        return Ok(0.0);
    }
    let na = dot(current, current).sqrt();
    let nb = dot(previous, previous).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical("cosine shift of a zero vector".into()));
    }
    Ok((1.0 - dot(current, previous) / (na * nb)).clamp(0.0, 2.0))
}

pub fn delta(metric: Metric, current: &[f64], previous: &[f64]) -> Result<f64> {
    match metric {
        Metric::Magnitude => delta_magnitude(current, previous),
        Metric::Cosine => delta_cosine(current, previous),
    }
}

/// One node's shift between snapshots `t - delta_t` and `t`.
///
/// `values[i]` belongs to snapshot `t = i + delta_t`; it is `None` when the
/// node is missing from either snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSeries {
    pub node_id: String,
    pub metric: Metric,
    pub delta_t: usize,
    pub values: Vec<Option<f64>>,
}

impl ShiftSeries {
    /// Value for snapshot `t`.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.delta_t)
            .and_then(|i| self.values.get(i).copied().flatten())
    }

    /// `(t, value)` for every defined entry.
    pub fn defined(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(move |(i, v)| v.map(|v| (i + self.delta_t, v)))
    }
}

/// Every node ever present in `snapshots`, sorted.
pub fn all_nodes(snapshots: &[EmbeddingSnapshot]) -> Vec<String> {
    let set: BTreeSet<&String> = snapshots.iter().flat_map(|s| s.ids().iter()).collect();
    set.into_iter().cloned().collect()
}

/// Per-node series of `metric` between snapshots `t - delta_t` and `t`.
pub fn shift_series(
    snapshots: &[EmbeddingSnapshot],
    metric: Metric,
    delta_t: usize,
) -> Result<BTreeMap<String, ShiftSeries>> {
    if snapshots.len() < 2 {
        return Err(Error::Data("shift series needs at least two snapshots".into()));
    }
    if delta_t == 0 || delta_t >= snapshots.len() {
        return Err(Error::Config(format!(
            "delta_t must lie in [1, {}), got {delta_t}",
            snapshots.len()
        )));
    }
    let nodes = all_nodes(snapshots);
    let rows = par::map(&nodes, |id| -> Result<ShiftSeries> {
        let values = (delta_t..snapshots.len())
            .map(|t| match (snapshots[t].vector(id), snapshots[t - delta_t].vector(id)) {
                (Some(cur), Some(prev)) => delta(metric, cur, prev)
                    .map(Some)
                    .map_err(|e| e.context(format!("node `{id}` at t={t}"))),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShiftSeries {
            node_id: id.clone(),
            metric,
            delta_t,
            values,
        })
    });
    rows.into_iter()
        .map(|r| r.map(|s| (s.node_id.clone(), s)))
        .collect()
}

/// Result of max-shift attribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxShift {
    /// Node → index of its peak normalized shift.
    pub months: BTreeMap<String, usize>,
    /// Nodes whose series never carries any shift.
    pub omitted: Vec<String>,
}

/// For each node, the index `t` maximizing `shift(node, t) / Σ_nodes shift(·, t)`.
///
/// Series share one time axis; missing values count as zero. Exact ties in
/// the normalized share go to the larger raw shift, then the earliest index.
/// Nodes with no positive normalized value are omitted.
pub fn max_shift_month(series: &BTreeMap<String, Vec<Option<f64>>>) -> MaxShift {
    let len = series.values().map(Vec::len).max().unwrap_or(0);
    let mut totals = vec![0.0; len];
    for values in series.values() {
        for (t, v) in values.iter().enumerate() {
            totals[t] += v.unwrap_or(0.0);
        }
    }
    let mut out = MaxShift::default();
    for (id, values) in series {
        let mut best: Option<(usize, f64, f64)> = None;
        for (t, v) in values.iter().enumerate() {
            let v = v.unwrap_or(0.0);
            if v <= 0.0 || totals[t] <= 0.0 {
                continue;
            }
            let share = v / totals[t];
            if best.is_none_or(|(_, b, raw)| share > b || (share == b && v > raw)) {
                best = Some((t, share, v));
            }
        }
        match best {
            Some((t, _, _)) => {
                out.months.insert(id.clone(), t);
            }
            None => {
                log::debug!("node `{id}` has an all-zero shift series; omitted from max-shift");
                out.omitted.push(id.clone());
            }
        }
    }
    if !out.omitted.is_empty() {
        log::warn!("{} nodes with all-zero shift series omitted from max-shift", out.omitted.len());
    }
    out
}

/// [`max_shift_month`] over [`ShiftSeries`], reporting snapshot indices.
pub fn max_shift_snapshot(series: &BTreeMap<String, ShiftSeries>) -> MaxShift {
    let offset = series.values().map(|s| s.delta_t).next().unwrap_or(0);
    let raw: BTreeMap<String, Vec<Option<f64>>> = series
        .iter()
        .map(|(k, s)| (k.clone(), s.values.clone()))
        .collect();
    let mut m = max_shift_month(&raw);
    for t in m.months.values_mut() {
        *t += offset;
    }
    m
}

/// Count of nodes per max-shift index.
pub fn max_shift_histogram(m: &MaxShift) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &t in m.months.values() {
        *h.entry(t).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn magnitude_examples() {
        assert_eq!(delta_magnitude(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(delta_magnitude(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(delta_magnitude(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.1, 2.0];
        assert_eq!(delta_cosine(&v, &v).unwrap(), 0.0);
        assert!((delta_cosine(&[1.0, 0.0], &[0.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((delta_cosine(&v, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!(delta_cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(delta_cosine(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 4),
            w in proptest::collection::vec(-10.0f64..10.0, 4),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(dot(&v, &v) > 1e-6 && dot(&w, &w) > 1e-6);
            let sv: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let sw: Vec<f64> = w.iter().map(|x| beta * x).collect();
            let a = delta_cosine(&v, &w).unwrap();
            let b = delta_cosine(&sv, &sw).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&a));
        }
    }

    #[test]
    fn max_shift_single_node() {
        let s: BTreeMap<_, _> = [("a".to_string(), vec![Some(0.1), Some(0.9), Some(0.2)])].into();
        assert_eq!(max_shift_month(&s).months["a"], 1);
    }

    #[test]
    fn max_shift_normalizes_by_column_totals() {
        let s: BTreeMap<_, _> = [
            ("A".to_string(), vec![Some(0.5), Some(0.5)]),
            ("B".to_string(), vec![Some(0.5), Some(4.5)]),
        ]
        .into();
        let m = max_shift_month(&s);
        assert_eq!(m.months["A"], 0);
        assert_eq!(m.months["B"], 1);
    }

    #[test]
    fn max_shift_ties_and_zeros() {
        let s: BTreeMap<_, _> = [
            ("a".to_string(), vec![Some(1.0), Some(1.0)]),
            ("z".to_string(), vec![Some(0.0), None]),
        ]
        .into();
        let m = max_shift_month(&s);
        assert_eq!(m.months["a"], 0);
        assert_eq!(m.omitted, vec!["z".to_string()]);
    }

    fn snap(t: usize, rows: &[(&str, [f64; 2])]) -> EmbeddingSnapshot {
        EmbeddingSnapshot::from_rows(t, 2, rows.iter().map(|(id, v)| (*id, v.to_vec()))).unwrap()
    }

    #[test]
    fn series_fencepost_and_frozen_nodes() {
        let snaps: Vec<_> = (0..29)
            .map(|t| snap(t, &[("frozen", [1.0, 2.0]), ("moving", [1.0, t as f64 + 1.0])]))
            .collect();
        let s = shift_series(&snaps, Metric::Cosine, 1).unwrap();
        assert_eq!(s["frozen"].values.len(), 28);
        assert!(s["frozen"].values.iter().all(|v| *v == Some(0.0)));
        assert!(s["moving"].values.iter().all(|v| v.unwrap() > 0.0));
        assert_eq!(s["moving"].at(0), None);
        assert!(s["moving"].at(1).is_some());
    }

    #[test]
    fn series_marks_births_as_undefined() {
        let snaps = vec![
            snap(0, &[("a", [1.0, 0.0])]),
            snap(1, &[("a", [1.0, 0.5]), ("b", [0.0, 1.0])]),
            snap(2, &[("a", [1.0, 0.5]), ("b", [0.5, 1.0])]),
        ];
        let s = shift_series(&snaps, Metric::Magnitude, 1).unwrap();
        assert_eq!(s["b"].values[0], None);
        assert_eq!(s["b"].values[1], Some(0.5));
        assert_eq!(s["a"].values[1], Some(0.0));
        let s2 = shift_series(&snaps, Metric::Magnitude, 2).unwrap();
        assert_eq!(s2["b"].values, vec![None]);
        assert!(shift_series(&snaps, Metric::Magnitude, 3).is_err());
        assert!(shift_series(&snaps[..1], Metric::Magnitude, 1).is_err());
    }
}
