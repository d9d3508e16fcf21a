use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use super::{NodeType, SnapshotWindow, TransactionRecord};
use crate::{Error, Result};

/// Weighted co-occurrence pairs of one node type within one window.
///
/// Keys are canonical `(a, b)` with `a < b`; values are the number of
/// length-2 walks `a - bridge - b` in the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMultiset {
    pub window: SnapshotWindow,
    pub node_type: NodeType,
    counts: BTreeMap<(String, String), u64>,
}

impl PairMultiset {
    pub fn new(window: SnapshotWindow, node_type: NodeType) -> Self {
        Self {
            window,
            node_type,
            counts: BTreeMap::new(),
        }
    }

    /// Add `count` to the pair `{a, b}`. Self-pairs and zero counts are ignored.
    pub fn add(&mut self, a: &str, b: &str, count: u64) {
        if a == b || count == 0 {
            return;
        }
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        *self.counts.entry(key).or_insert(0) += count;
    }

    pub fn get(&self, a: &str, b: &str) -> u64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.counts
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<(String, String), u64> {
        &self.counts
    }

    /// Pairs in canonical sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.counts.iter().map(|((a, b), &c)| (a.as_str(), b.as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sum of all pair counts.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Per-node sum of the counts of pairs touching it, sorted by node id.
    pub fn node_weights(&self) -> BTreeMap<String, u64> {
        let mut w = BTreeMap::new();
        for ((a, b), &c) in &self.counts {
            *w.entry(a.clone()).or_insert(0) += c;
            *w.entry(b.clone()).or_insert(0) += c;
        }
        w
    }

    /// Drop pairs whose count is below `min_count`.
    pub fn trim(&mut self, min_count: u64) {
        if min_count > 1 {
            self.counts.retain(|_, c| *c >= min_count);
        }
    }
}

/// Project one window's bipartite graph onto `node_type`.
///
/// Every bridge node of the other type links each pair of distinct nodes it
/// transacted with; the pair weight is the product of the two transaction
/// counts, summed over bridges.
pub fn project(records: &[TransactionRecord], window: SnapshotWindow, node_type: NodeType) -> PairMultiset {
    let bridge_type = node_type.bridge();
    let mut per_bridge: HashMap<&str, BTreeMap<&str, u64>> = HashMap::new();
    for r in records {
        *per_bridge
            .entry(r.node(bridge_type))
            .or_default()
            .entry(r.node(node_type))
            .or_insert(0) += 1;
    }

    let mut acc: HashMap<(&str, &str), u64> = HashMap::new();
    for nodes in per_bridge.values() {
        let nodes: Vec<(&str, u64)> = nodes.iter().map(|(k, v)| (*k, *v)).collect();
        for (i, &(a, ca)) in nodes.iter().enumerate() {
            for &(b, cb) in &nodes[i + 1..] {
                // BTreeMap order gives a < b already.
                *acc.entry((a, b)).or_insert(0) += ca * cb;
            }
        }
    }

    PairMultiset {
        window,
        node_type,
        counts: acc
            .into_iter()
            .map(|((a, b), c)| ((a.to_string(), b.to_string()), c))
            .collect(),
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Write `a<TAB>b<TAB>count` lines in sorted order, plus a `<path>.meta`
/// sidecar holding the window bounds and node type.
pub fn write_pairs(pairs: &PairMultiset, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for (a, b, c) in pairs.iter() {
        writeln!(w, "{a}\t{b}\t{c}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let meta = meta_path(path);
    let text = format!(
        "window_index={}\nstart={}\nend={}\nnode_type={}\npairs={}\ntotal={}\n",
        pairs.window.index,
        pairs.window.start.to_rfc3339(),
        pairs.window.end.to_rfc3339(),
        pairs.node_type,
        pairs.len(),
        pairs.total()
    );
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
}

pub fn read_pairs(path: &Path) -> Result<PairMultiset> {
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let kv: HashMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Data(format!("{}: missing `{k}`", meta.display())))
    };
    let ts = |k: &str| -> Result<DateTime<Utc>> {
        let v = get(k)?;
        DateTime::parse_from_rfc3339(v)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Data(format!("{}: bad {k} `{v}`: {e}", meta.display())))
    };
    let window = SnapshotWindow {
        index: get("window_index")?
            .parse()
            .map_err(|e| Error::Data(format!("{}: bad window_index: {e}", meta.display())))?,
        start: ts("start")?,
        end: ts("end")?,
    };
    let mut pairs = PairMultiset::new(window, get("node_type")?.parse()?);

    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let bad = || Error::Data(format!("{}:{}: malformed pair line", path.display(), i + 1));
        let (a, b, c) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(bad()),
        };
        let c: u64 = c.parse().map_err(|_| bad())?;
        if a == b || c == 0 {
            return Err(bad());
        }
        pairs.add(a, b, c);
    }
    Ok(pairs)
}
