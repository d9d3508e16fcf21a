//! Text snapshot format.
//!
//! ```text
//! <timestamp_index> <dim> <node_count> [smoothed]
//! <node_id> <x_0> ... <x_{d-1}>        node_count rows, input vectors
//! context                              optional section
//! <node_id> <x_0> ... <x_{d-1}>        node_count rows, same order
//! updated <m>                          optional section
//! <node_id> <pair_weight>              m rows
//! ```
//!
//! Floats are written in shortest round-trip scientific notation, so a
//! write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::EmbeddingSnapshot;
use crate::{Error, Result};

fn write_row(out: &mut String, id: &str, v: &[f64]) {
    out.push_str(id);
    for x in v {
        let _ = write!(out, " {x:e}");
    }
    out.push('\n');
}

pub fn write_snapshot(snap: &EmbeddingSnapshot, path: &Path) -> Result<()> {
    if let Some(bad) = snap.ids().iter().find(|id| id.is_empty() || id.contains(char::is_whitespace)) {
        return Err(Error::Data(format!(
            "node id {bad:?} cannot be stored in the text snapshot format"
        )));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let mut buf = String::new();
    let _ = write!(buf, "{} {} {}", snap.timestamp_index, snap.dim(), snap.len());
    if snap.smoothed {
        buf.push_str(" smoothed");
    }
    buf.push('\n');
    for (i, id) in snap.ids().iter().enumerate() {
        write_row(&mut buf, id, snap.row(i));
        if buf.len() > 1 << 16 {
            w.write_all(buf.as_bytes()).map_err(io)?;
            buf.clear();
        }
    }
    if let Some(ctx) = snap.context_table() {
        buf.push_str("context\n");
        let d = snap.dim();
        for (i, id) in snap.ids().iter().enumerate() {
            write_row(&mut buf, id, &ctx[i * d..(i + 1) * d]);
            if buf.len() > 1 << 16 {
                w.write_all(buf.as_bytes()).map_err(io)?;
                buf.clear();
            }
        }
    }
    let _ = writeln!(buf, "updated {}", snap.updated().len());
    for (id, weight) in snap.updated() {
        let _ = writeln!(buf, "{id} {weight}");
    }
    w.write_all(buf.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

fn parse_row(line: &str, dim: usize, path: &Path, lineno: usize) -> Result<(String, Vec<f64>)> {
    let bad = |what: &str| Error::Data(format!("{}:{lineno}: {what}", path.display()));
    let mut it = line.split_ascii_whitespace();
    let id = it.next().ok_or_else(|| bad("empty row"))?.to_string();
    let v = it
        .map(|t| t.parse::<f64>().map_err(|_| bad("bad float")))
        .collect::<Result<Vec<f64>>>()?;
    if v.len() != dim {
        return Err(bad(&format!("expected {dim} components, found {}", v.len())));
    }
    Ok((id, v))
}

pub fn read_snapshot(path: &Path) -> Result<EmbeddingSnapshot> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((i, Ok(l))) => Ok(Some((i + 1, l))),
            Some((_, Err(e))) => Err(Error::io(path, e)),
            None => Ok(None),
        }
    };
    let bad = |n: usize, what: &str| Error::Data(format!("{}:{n}: {what}", path.display()));

    let (_, header) = next()?.ok_or_else(|| bad(1, "empty snapshot file"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() < 3 {
        return Err(bad(1, "header must be `timestamp_index dim node_count`"));
    }
    let t: usize = fields[0].parse().map_err(|_| bad(1, "bad timestamp_index"))?;
    let dim: usize = fields[1].parse().map_err(|_| bad(1, "bad dim"))?;
    let n: usize = fields[2].parse().map_err(|_| bad(1, "bad node_count"))?;
    let smoothed = fields[3..].contains(&"smoothed");

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let (no, line) = next()?.ok_or_else(|| bad(0, "truncated input table"))?;
        rows.push(parse_row(&line, dim, path, no)?);
    }

    let mut context: Option<Vec<Vec<f64>>> = None;
    let mut updated = BTreeMap::new();
    while let Some((no, line)) = next()? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "context" {
            let mut ctx = Vec::with_capacity(n);
            for (id, _) in &rows {
                let (no, l) = next()?.ok_or_else(|| bad(no, "truncated context table"))?;
                let (cid, v) = parse_row(&l, dim, path, no)?;
                if &cid != id {
                    return Err(bad(no, "context rows out of order"));
                }
                ctx.push(v);
            }
            context = Some(ctx);
        } else if let Some(m) = line.strip_prefix("updated ") {
            let m: usize = m.trim().parse().map_err(|_| bad(no, "bad updated count"))?;
            for _ in 0..m {
                let (no, l) = next()?.ok_or_else(|| bad(no, "truncated updated section"))?;
                let (id, w) = l
                    .split_once(' ')
                    .ok_or_else(|| bad(no, "updated row must be `id weight`"))?;
                let w: u64 = w.trim().parse().map_err(|_| bad(no, "bad pair weight"))?;
                updated.insert(id.to_string(), w);
            }
        } else {
            return Err(bad(no, "unexpected section"));
        }
    }

    let mut snap = EmbeddingSnapshot::new(t, dim);
    if context.is_none() {
        snap.drop_context();
    }
    for (i, (id, v)) in rows.into_iter().enumerate() {
        let c = context.as_ref().map(|c| c[i].as_slice());
        snap.push(id, &v, c)?;
    }
    snap.set_updated(updated);
    snap.smoothed = smoothed;
    Ok(snap)
}
