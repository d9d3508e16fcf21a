use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CategoryMix, Metric, OverlapPoint, ShiftSeries};
use crate::{Error, Result};

fn save(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `node_id,t,value` rows for every defined entry, sorted by node then t.
pub fn write_series_csv(path: &Path, series: &BTreeMap<String, ShiftSeries>) -> Result<()> {
    let mut out = String::from("node_id,t,value\n");
    for (id, s) in series {
        for (t, v) in s.defined() {
            let _ = writeln!(out, "{id},{t},{v}");
        }
    }
    save(path, out)
}

/// Inverse of [`write_series_csv`]. `len` is the number of slots per series
/// (snapshot count minus `delta_t`); slots absent from the file are `None`.
pub fn read_series_csv(
    path: &Path,
    metric: Metric,
    delta_t: usize,
    len: usize,
) -> Result<BTreeMap<String, ShiftSeries>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out: BTreeMap<String, ShiftSeries> = BTreeMap::new();
    for (i, row) in reader.deserialize::<(String, usize, f64)>().enumerate() {
        let bad = |m: String| Error::Data(format!("{}:{}: {m}", path.display(), i + 2));
        let (id, t, v) = row.map_err(|e| bad(e.to_string()))?;
        let slot = t
            .checked_sub(delta_t)
            .filter(|&s| s < len)
            .ok_or_else(|| bad(format!("t={t} outside [{delta_t}, {})", len + delta_t)))?;
        let s = out.entry(id.clone()).or_insert_with(|| ShiftSeries {
            node_id: id,
            metric,
            delta_t,
            values: vec![None; len],
        });
        s.values[slot] = Some(v);
    }
    Ok(out)
}

pub fn write_overlap_csv(path: &Path, points: &[OverlapPoint]) -> Result<()> {
    let mut out = String::from("t,k,delta_t,overlap\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.t, p.k, p.delta_t, p.overlap);
    }
    save(path, out)
}

pub fn write_mix_csv(path: &Path, mixes: &[CategoryMix]) -> Result<()> {
    let mut out = String::from("t,category,top_fraction,base_fraction\n");
    for m in mixes {
        for (c, base) in &m.base {
            let _ = writeln!(out, "{},{c},{},{base}", m.t, m.top_fraction(c));
        }
    }
    save(path, out)
}

pub fn write_histogram_csv(path: &Path, hist: &BTreeMap<usize, usize>) -> Result<()> {
    let mut out = String::from("t,count\n");
    for (t, c) in hist {
        let _ = writeln!(out, "{t},{c}");
    }
    save(path, out)
}
