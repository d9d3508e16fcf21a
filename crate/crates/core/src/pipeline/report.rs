use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::stages::{modal, read_table, require, shocked_categories, StageFiles};
use super::{PipelineConfig, Stage};
use crate::{Error, Result};

fn num<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("{}: bad number `{s}`", path.display())))
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "n/a".into()
    }
}

pub(crate) fn write(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let windows = require(out.join(Stage::Project.dir()).join("windows.csv"), Stage::Project)?;
    let histogram = require(out.join("shift/max_shift_histogram.csv"), Stage::Shift)?;
    let cat_max = require(out.join("shift/category_max_shift.csv"), Stage::Shift)?;
    let mix = require(out.join("shift/category_mix.csv"), Stage::Shift)?;
    let overlap = require(out.join("neighborhoods/overlap.csv"), Stage::Neighborhoods)?;
    let noise = require(out.join("smoothed/noise.csv"), Stage::Smooth)?;
    let grid = require(out.join("forecast/grid.csv"), Stage::Forecast)?;
    for p in [&windows, &histogram, &cat_max, &mix, &overlap, &noise, &grid] {
        f.input(p);
    }
    let shocks = match shocked_categories(out)? {
        Some((path, s)) if cfg.input.is_none() => {
            f.input(&path);
            s
        }
        _ => Vec::new(),
    };

    let mut md = String::from("# Drift report\n\n");

    let rows = read_table(&windows)?;
    let _ = writeln!(md, "## Snapshots\n\n{} windows of {} nodes.\n", rows.len(), cfg.node_type);
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|r| vec![r[0].clone(), r[1].chars().take(10).collect(), r[3].clone(), r[4].clone()])
        .collect();
    table(&mut md, &["t", "start", "records", "pairs"], &rows);

    md.push_str("## Max-shift month\n\nNodes whose normalized magnitude shift peaks at each snapshot.\n\n");
    table(&mut md, &["t", "nodes"], &read_table(&histogram)?);

    let mut per_cat: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    for r in read_table(&cat_max)? {
        per_cat
            .entry(r[0].clone())
            .or_default()
            .insert(num(&r[1], &cat_max)?, num(&r[2], &cat_max)?);
    }
    md.push_str("Modal max-shift month per category:\n\n");
    let rows: Vec<Vec<String>> = per_cat
        .iter()
        .map(|(c, counts)| {
            let mode = modal(counts).map(|t| t.to_string()).unwrap_or_default();
            let flag = shocks
                .iter()
                .filter(|(_, cats)| cats.contains(c))
                .map(|(m, _)| {
                    if mode == m.to_string() {
                        format!("shocked at {m}, detected")
                    } else {
                        format!("shocked at {m}, not detected")
                    }
                })
                .collect::<Vec<_>>()
                .join("; ");
            vec![c.clone(), mode, counts.values().sum::<usize>().to_string(), flag]
        })
        .collect();
    table(&mut md, &["category", "modal t", "nodes", "shock"], &rows);

    // Per timestamp, the category most over-represented among top cosine shifters.
    let mut best: BTreeMap<usize, (String, f64, f64)> = BTreeMap::new();
    for r in read_table(&mix)? {
        let t: usize = num(&r[0], &mix)?;
        let (top, base): (f64, f64) = (num(&r[2], &mix)?, num(&r[3], &mix)?);
        let ratio = if base > 0.0 { top / base } else { 0.0 };
        let e = best.entry(t).or_insert((r[1].clone(), top, base));
        let cur = if e.2 > 0.0 { e.1 / e.2 } else { 0.0 };
        if ratio > cur {
            *e = (r[1].clone(), top, base);
        }
    }
    let _ = writeln!(
        md,
        "## Top cosine shifters\n\nCategory most over-represented among the top {}% of cosine shifters.\n",
        cfg.analysis.top_fraction * 100.0
    );
    let rows: Vec<Vec<String>> = best
        .into_iter()
        .map(|(t, (c, top, base))| {
            let ratio = if base > 0.0 { fmt(top / base) } else { "n/a".into() };
            vec![t.to_string(), c, fmt(top), fmt(base), ratio]
        })
        .collect();
    table(&mut md, &["t", "category", "top share", "base share", "ratio"], &rows);

    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in read_table(&overlap)? {
        let e = acc.entry((num(&r[1], &overlap)?, num(&r[2], &overlap)?)).or_insert((0.0, 0));
        e.0 += num::<f64>(&r[3], &overlap)?;
        e.1 += 1;
    }
    md.push_str("## Neighborhood overlap\n\nMean normalized top-k intersection over all valid timestamps.\n\n");
    let rows: Vec<Vec<String>> = acc
        .into_iter()
        .map(|((k, d), (s, n))| vec![k.to_string(), d.to_string(), fmt(s / n as f64), n.to_string()])
        .collect();
    table(&mut md, &["k", "delta_t", "mean overlap", "timestamps"], &rows);

    md.push_str("## Smoothing\n\nCosine shift of eligible nodes before and after smoothing.\n\n");
    let rows: Vec<Vec<String>> = read_table(&noise)?
        .into_iter()
        .map(|r| {
            let mut v = vec![r[0].clone(), r[1].clone()];
            v.extend(r[2..].iter().map(|x| x.parse().map(fmt).unwrap_or_else(|_| x.clone())));
            v
        })
        .collect();
    table(
        &mut md,
        &["t", "eligible", "raw mean", "raw var", "smoothed mean", "smoothed var"],
        &rows,
    );

    // Grid laid out as sequence length by training length, baseline first.
    let mut cells: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    let mut trs: Vec<String> = Vec::new();
    for r in read_table(&grid)? {
        let key = if r[1].is_empty() { "baseline".to_string() } else { r[1].clone() };
        if !r[1].is_empty() && !trs.contains(&key) {
            trs.push(key.clone());
        }
        cells.entry(num(&r[0], &grid)?).or_default().insert(key, num(&r[3], &grid)?);
    }
    trs.sort_by_key(|t| t.parse::<usize>().unwrap_or(0));
    let test = cfg
        .forecast
        .test_index
        .map(|t| format!("snapshot {t}"))
        .unwrap_or_else(|| "the final snapshot".into());
    let _ = writeln!(
        md,
        "## Forecasting\n\nTest MSE of next-step cosine shift on {test}. Columns are training lengths.\n"
    );
    let mut header = vec!["sequence length".to_string(), "moving average".to_string()];
    header.extend(trs.iter().map(|t| format!("t_tr={t}")));
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|(l, m)| {
            let mut v = vec![l.to_string(), m.get("baseline").copied().map(fmt).unwrap_or_default()];
            v.extend(trs.iter().map(|t| m.get(t).copied().map(fmt).unwrap_or_default()));
            v
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&mut md, &header, &rows);

    let path = out.join(Stage::Report.dir()).join("report.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    f.outputs.push(path);
    Ok(())
}
