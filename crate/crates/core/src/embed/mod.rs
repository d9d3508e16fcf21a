//! Chained skip-gram embeddings over a sequence of pair snapshots.

mod io;
mod objective;
mod sgns;
mod train;

use std::collections::{BTreeMap, HashMap};

pub use io::{read_snapshot, write_snapshot};
pub use objective::PairObjective;
pub use sgns::{dot, sgns_gradient, sgns_loss, sigmoid, Label, LOGIT_CLAMP};
pub use train::{chain_train, train_snapshot, TrainConfig, Visitation};

use crate::{Error, Result};

/// Node → vector table at one timestamp, cumulative over all earlier
/// snapshots.
///
/// Rows keep insertion order: nodes carried over from the previous snapshot
/// first, then newcomers sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub timestamp_index: usize,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    input: Vec<f64>,
    context: Option<Vec<f64>>,
    /// Nodes that received training pairs this round, with their total pair weight.
    updated: BTreeMap<String, u64>,
    /// Set on snapshots produced by trajectory smoothing.
    pub smoothed: bool,
}

impl EmbeddingSnapshot {
    pub fn new(timestamp_index: usize, dim: usize) -> Self {
        Self {
            timestamp_index,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            input: Vec::new(),
            context: Some(Vec::new()),
            updated: BTreeMap::new(),
            smoothed: false,
        }
    }

    /// Build a snapshot from `(id, vector)` rows with no context table.
    pub fn from_rows<I, S>(timestamp_index: usize, dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut snap = Self::new(timestamp_index, dim);
        snap.context = None;
        for (id, v) in rows {
            snap.push(id.into(), &v, None)?;
        }
        Ok(snap)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Input vector of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_context(&self) -> bool {
        self.context.is_some()
    }

    pub fn context_vector(&self, id: &str) -> Option<&[f64]> {
        let i = self.index_of(id)?;
        self.context
            .as_ref()
            .map(|c| &c[i * self.dim..(i + 1) * self.dim])
    }

    /// The whole input table, row-major.
    pub fn input_table(&self) -> &[f64] {
        &self.input
    }

    pub fn updated(&self) -> &BTreeMap<String, u64> {
        &self.updated
    }

    pub fn is_updated(&self, id: &str) -> bool {
        self.updated.contains_key(id)
    }

    pub fn set_updated(&mut self, updated: BTreeMap<String, u64>) {
        self.updated = updated;
    }

    /// Append a node. `context` of `None` stores zeros when this snapshot
    /// keeps a context table.
    pub fn push(&mut self, id: String, input: &[f64], context: Option<&[f64]>) -> Result<()> {
        if input.len() != self.dim {
            return Err(Error::Data(format!(
                "node `{id}`: vector has {} components, expected {}",
                input.len(),
                self.dim
            )));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("node `{id}`: non-finite component")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Data(format!("duplicate node `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.input.extend_from_slice(input);
        if let Some(ctx) = self.context.as_mut() {
            match context {
                Some(c) if c.len() == self.dim => ctx.extend_from_slice(c),
                Some(c) => {
                    return Err(Error::Data(format!(
                        "context vector has {} components, expected {}",
                        c.len(),
                        self.dim
                    )))
                }
                None => ctx.extend(std::iter::repeat(0.0).take(self.dim)),
            }
        }
        Ok(())
    }

    /// Give this snapshot a zero context table if it has none.
    pub(crate) fn ensure_context(&mut self) {
        if self.context.is_none() {
            self.context = Some(vec![0.0; self.input.len()]);
        }
    }

    pub(crate) fn tables_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.ensure_context();
        let ctx = self.context.as_mut().expect("context present");
        (&mut self.input, ctx)
    }

    pub(crate) fn drop_context(&mut self) {
        self.context = None;
    }

    pub(crate) fn context_table(&self) -> Option<&[f64]> {
        self.context.as_deref()
    }
}

/// Cosine similarity, 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
