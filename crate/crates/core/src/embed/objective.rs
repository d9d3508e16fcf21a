use super::sgns::{sgns_gradient, sgns_loss, Label};
use super::EmbeddingSnapshot;
use crate::{Error, Result};

/// The negated pair log-likelihood over fixed positive and negative pair
/// counts, for full-batch evaluation and gradient descent.
///
/// Each undirected pair `{a, b}` with weight `n` contributes
/// `n·[ℓ(v_a, u_b) + ℓ(v_b, u_a)]`, where `v` are input vectors, `u` context
/// vectors and `ℓ` the SGNS loss, matching how training visits a pair in
/// both directions.
#[derive(Debug, Clone, Default)]
pub struct PairObjective {
    pub positives: Vec<(String, String, f64)>,
    pub negatives: Vec<(String, String, f64)>,
}

impl PairObjective {
    fn terms(&self) -> impl Iterator<Item = (&str, &str, f64, Label)> {
        self.positives
            .iter()
            .map(|(a, b, n)| (a.as_str(), b.as_str(), *n, Label::Positive))
            .chain(
                self.negatives
                    .iter()
                    .map(|(a, b, n)| (a.as_str(), b.as_str(), *n, Label::Negative)),
            )
    }

    fn lookup(snap: &EmbeddingSnapshot, id: &str) -> Result<usize> {
        snap.index_of(id)
            .ok_or_else(|| Error::Data(format!("objective references unknown node `{id}`")))
    }

    pub fn loss(&self, snap: &EmbeddingSnapshot) -> Result<f64> {
        let mut total = 0.0;
        for (a, b, n, label) in self.terms() {
            let (va, vb) = (snap.vector(a), snap.vector(b));
            let (ua, ub) = (snap.context_vector(a), snap.context_vector(b));
            match (va, vb, ua, ub) {
                (Some(va), Some(vb), Some(ua), Some(ub)) => {
                    total += n * (sgns_loss(va, ub, label) + sgns_loss(vb, ua, label));
                }
                _ => {
                    Self::lookup(snap, a)?;
                    Self::lookup(snap, b)?;
                    return Err(Error::Data("objective needs a context table".into()));
                }
            }
        }
        Ok(total)
    }

    /// One full-batch gradient-descent step with step size `lr`; every
    /// gradient is evaluated at the current parameters before any update.
    pub fn step(&self, snap: &mut EmbeddingSnapshot, lr: f64) -> Result<()> {
        let d = snap.dim();
        let n_rows = snap.len();
        let mut g_in = vec![0.0; n_rows * d];
        let mut g_ctx = vec![0.0; n_rows * d];
        snap.ensure_context();
        for (a, b, n, label) in self.terms() {
            let ia = Self::lookup(snap, a)?;
            let ib = Self::lookup(snap, b)?;
            for (i, j) in [(ia, ib), (ib, ia)] {
                let v = snap.row(i);
                let u = &snap.context_table().expect("context ensured")[j * d..(j + 1) * d];
                let (gv, gu) = sgns_gradient(v, u, label);
                for k in 0..d {
                    g_in[i * d + k] += n * gv[k];
                    g_ctx[j * d + k] += n * gu[k];
                }
            }
        }
        let (input, ctx) = snap.tables_mut();
        for (x, g) in input.iter_mut().zip(&g_in) {
            *x -= lr * g;
        }
        for (x, g) in ctx.iter_mut().zip(&g_ctx) {
            *x -= lr * g;
        }
        Ok(())
    }
}
