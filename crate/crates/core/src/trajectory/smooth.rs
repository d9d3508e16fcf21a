use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::em::{constant_velocity_start, fit_em, EmOptions};
use super::kalman::{kalman_smooth, KalmanSmoothed};
use crate::embed::EmbeddingSnapshot;
use crate::shift::{all_nodes, delta_magnitude};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothOptions {
    /// Rescale each step by the corpus-mean magnitude shift before fitting.
    pub normalize: bool,
    pub em: EmOptions,
    /// Shorter present suffixes pass through unsmoothed.
    pub min_observations: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            em: EmOptions::default(),
            min_observations: 4,
        }
    }
}

/// Smoothed `[position, velocity]` state of one embedding component over a
/// node's present suffix, in the (possibly normalized) space the model was
/// fitted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedTrajectory {
    pub node_id: String,
    pub dim_index: usize,
    /// Snapshot index of the first entry.
    pub start: usize,
    pub smoothed_means: Vec<[f64; 2]>,
    pub smoothed_covariances: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone)]
pub struct SmoothedEmbeddings {
    pub snapshots: Vec<EmbeddingSnapshot>,
    /// Nodes whose present suffix was too short to smooth.
    pub passthrough: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityVector {
    pub node_id: String,
    pub timestamp_index: usize,
    pub components: Vec<f64>,
}

/// Mean magnitude shift over nodes present at both `t - 1` and `t`, for each
/// `t`; entry 0 and steps without movement are 1.
pub fn step_scales(snapshots: &[EmbeddingSnapshot]) -> Result<Vec<f64>> {
    let mut scales = vec![1.0; snapshots.len()];
    for t in 1..snapshots.len() {
        let (cur, prev) = (&snapshots[t], &snapshots[t - 1]);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, id) in prev.ids().iter().enumerate() {
            if let Some(v) = cur.vector(id) {
                sum += delta_magnitude(v, prev.row(i))?;
                n += 1;
            }
        }
        if n > 0 && sum > 0.0 {
            scales[t] = sum / n as f64;
        }
    }
    Ok(scales)
}

/// First index of the maximal run of snapshots ending at the last one that
/// all contain `id`.
fn present_suffix(snapshots: &[EmbeddingSnapshot], id: &str) -> Option<usize> {
    let mut start = None;
    for t in (0..snapshots.len()).rev() {
        if snapshots[t].contains(id) {
            start = Some(t);
        } else {
            break;
        }
    }
    start
}

fn normalize_series(z: &[f64], scales: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(z.len());
    y.push(z[0]);
    for t in 1..z.len() {
        y.push(y[t - 1] + (z[t] - z[t - 1]) / scales[t]);
    }
    y
}

fn denormalize_series(y: &[f64], scales: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(y.len());
    z.push(y[0]);
    for t in 1..y.len() {
        z.push(z[t - 1] + (y[t] - y[t - 1]) * scales[t]);
    }
    z
}

fn fit_and_smooth(y: &[f64], em: &EmOptions) -> Result<KalmanSmoothed<2>> {
    let start = constant_velocity_start(y, em.variance_floor);
    let fit = fit_em(y, &start, em)?;
    kalman_smooth(y, &fit.model)
}

/// Smooth one scalar series with an EM-fitted constant-velocity model.
///
/// `scales[t]` divides the step from `t - 1` to `t` before fitting and
/// multiplies it back afterwards. Constant series come back unchanged.
pub fn smooth_scalar(z: &[f64], scales: Option<&[f64]>, em: &EmOptions) -> Result<Vec<f64>> {
    if z.iter().all(|x| x.to_bits() == z[0].to_bits()) {
        return Ok(z.to_vec());
    }
    let y = match scales {
        Some(s) => normalize_series(z, s),
        None => z.to_vec(),
    };
    let sm = fit_and_smooth(&y, em)?;
    let yhat: Vec<f64> = sm.means.iter().map(|m| m[0]).collect();
    Ok(match scales {
        Some(s) => denormalize_series(&yhat, s),
        None => yhat,
    })
}

/// Full smoothed state of one component of one node.
pub fn smooth_trajectory(
    snapshots: &[EmbeddingSnapshot],
    node_id: &str,
    dim_index: usize,
    opts: &SmoothOptions,
) -> Result<SmoothedTrajectory> {
    let start = present_suffix(snapshots, node_id)
        .ok_or_else(|| Error::Data(format!("node `{node_id}` is not in the last snapshot")))?;
    let dim = snapshots[start].dim();
    if dim_index >= dim {
        return Err(Error::Config(format!("dimension {dim_index} out of range 0..{dim}")));
    }
    let z: Vec<f64> = snapshots[start..]
        .iter()
        .map(|s| s.vector(node_id).map(|v| v[dim_index]).unwrap_or(0.0))
        .collect();
    let y = if opts.normalize {
        normalize_series(&z, &step_scales(snapshots)?[start..])
    } else {
        z
    };
    let sm = fit_and_smooth(&y, &opts.em)?;
    Ok(SmoothedTrajectory {
        node_id: node_id.to_string(),
        dim_index,
        start,
        smoothed_means: sm.means.iter().map(|m| [m[0], m[1]]).collect(),
        smoothed_covariances: sm
            .covariances
            .iter()
            .map(|p| [[p[(0, 0)], p[(0, 1)]], [p[(1, 0)], p[(1, 1)]]])
            .collect(),
    })
}

/// Smooth every node's trajectory component by component.
///
/// Each node is smoothed over its maximal present suffix; nodes whose suffix
/// is shorter than `min_observations` are copied through and listed in
/// `passthrough`. Output snapshots keep the input row order, drop context
/// tables and are flagged as smoothed.
pub fn smooth_embeddings(snapshots: &[EmbeddingSnapshot], opts: &SmoothOptions) -> Result<SmoothedEmbeddings> {
    let min_obs = opts.min_observations.max(4);
    if snapshots.len() < min_obs {
        return Err(Error::Config(format!(
            "smoothing needs at least {min_obs} snapshots, got {}",
            snapshots.len()
        )));
    }
    let dim = snapshots[0].dim();
    if snapshots.iter().any(|s| s.dim() != dim) {
        return Err(Error::Data("snapshots disagree on dimension".into()));
    }
    let scales = if opts.normalize {
        Some(step_scales(snapshots)?)
    } else {
        None
    };
    let nodes = all_nodes(snapshots);

    // Per node: suffix start and the smoothed values laid out [t][dim].
    let results: Vec<Result<Option<(usize, Vec<f64>)>>> = par::map(&nodes, |id| {
        let Some(start) = present_suffix(snapshots, id) else {
            return Ok(None);
        };
        let len = snapshots.len() - start;
        if len < min_obs {
            return Ok(None);
        }
        let rows: Vec<&[f64]> = snapshots[start..].iter().map(|s| s.vector(id).unwrap_or(&[])).collect();
        let mut out = vec![0.0; len * dim];
        let mut z = vec![0.0; len];
        for j in 0..dim {
            for (t, r) in rows.iter().enumerate() {
                z[t] = r[j];
            }
            let sm = smooth_scalar(&z, scales.as_deref().map(|s| &s[start..]), &opts.em)
                .map_err(|e| e.context(format!("node `{id}` dimension {j}")))?;
            for (t, v) in sm.into_iter().enumerate() {
                out[t * dim + j] = v;
            }
        }
        Ok(Some((start, out)))
    });

    let mut smoothed = Vec::with_capacity(nodes.len());
    let mut passthrough = BTreeSet::new();
    for (id, r) in nodes.iter().zip(results) {
        match r? {
            Some(x) => smoothed.push((id.as_str(), x)),
            None => {
                passthrough.insert(id.clone());
            }
        }
    }
    let lookup: std::collections::HashMap<&str, &(usize, Vec<f64>)> =
        smoothed.iter().map(|(id, x)| (*id, x)).collect();

    let mut out = Vec::with_capacity(snapshots.len());
    for (t, snap) in snapshots.iter().enumerate() {
        let mut s = EmbeddingSnapshot::from_rows(
            snap.timestamp_index,
            dim,
            std::iter::empty::<(String, Vec<f64>)>(),
        )?;
        for (i, id) in snap.ids().iter().enumerate() {
            let row = match lookup.get(id.as_str()) {
                Some((start, vals)) if t >= *start => &vals[(t - start) * dim..(t - start + 1) * dim],
                _ => snap.row(i),
            };
            s.push(id.clone(), row, None)?;
        }
        s.set_updated(snap.updated().clone());
        s.smoothed = true;
        out.push(s);
    }
    Ok(SmoothedEmbeddings {
        snapshots: out,
        passthrough,
    })
}

/// `v̂_t - v̂_{t-1}` for every node present at both `t - 1` and `t`, ordered
/// by `t` then by row order at `t`.
pub fn velocity(snapshots: &[EmbeddingSnapshot]) -> Result<Vec<VelocityVector>> {
    if snapshots.len() < 2 {
        return Err(Error::Config(format!(
            "velocity needs at least 2 snapshots, got {}",
            snapshots.len()
        )));
    }
    let mut out = Vec::new();
    for t in 1..snapshots.len() {
        let (cur, prev) = (&snapshots[t], &snapshots[t - 1]);
        for (i, id) in cur.ids().iter().enumerate() {
            if let Some(p) = prev.vector(id) {
                out.push(VelocityVector {
                    node_id: id.clone(),
                    timestamp_index: cur.timestamp_index,
                    components: cur.row(i).iter().zip(p).map(|(a, b)| a - b).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// CSV `node_id,t,c_0,…,c_{d-1}`.
pub fn write_velocity_csv(path: &Path, velocities: &[VelocityVector]) -> Result<()> {
    let dim = velocities.first().map(|v| v.components.len()).unwrap_or(0);
    let mut out = String::from("node_id,t");
    for j in 0..dim {
        let _ = write!(out, ",c_{j}");
    }
    out.push('\n');
    for v in velocities {
        let _ = write!(out, "{},{}", v.node_id, v.timestamp_index);
        for c in &v.components {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
