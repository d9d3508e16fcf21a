use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Example, ForecastConfig};
use crate::{par, Error, Result};

/// Gate order inside every stacked parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

/// Single-layer LSTM over a scalar sequence with a linear readout of the
/// final hidden state.
///
/// Parameters live in one flat vector laid out as
/// `w_x [4H] | w_h [4H × H] | b [4H] | w_out [H] | b_out [1]`, each stacked
/// block ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRegressor {
    hidden: usize,
    params: Vec<f64>,
}

pub fn param_count(hidden: usize) -> usize {
    4 * hidden + 4 * hidden * hidden + 4 * hidden + hidden + 1
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmRegressor {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            params: vec![0.0; param_count(hidden)],
        }
    }

    /// Uniform weights in `±1/√H`, forget-gate bias 1, zero readout bias.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut m = Self::zeros(hidden);
        for p in m.params.iter_mut() {
            *p = rng.random_range(-bound..bound);
        }
        for u in 0..hidden {
            *m.bias_mut(Gate::Input, u) = 0.0;
            *m.bias_mut(Gate::Forget, u) = 1.0;
            *m.bias_mut(Gate::Candidate, u) = 0.0;
            *m.bias_mut(Gate::Output, u) = 0.0;
        }
        let last = m.params.len() - 1;
        m.params[last] = 0.0;
        m
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != param_count(hidden) {
            return Err(Error::Data(format!(
                "LSTM with {hidden} hidden units needs {} parameters, got {}",
                param_count(hidden),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("LSTM parameters must be finite".into()));
        }
        Ok(Self { hidden, params })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn off_wh(&self) -> usize {
        4 * self.hidden
    }

    fn off_b(&self) -> usize {
        self.off_wh() + 4 * self.hidden * self.hidden
    }

    fn off_out(&self) -> usize {
        self.off_b() + 4 * self.hidden
    }

    /// Input weight of `gate` for hidden unit `unit`.
    pub fn w_x(&self, gate: Gate, unit: usize) -> f64 {
        self.params[gate as usize * self.hidden + unit]
    }

    /// Recurrent weight from hidden unit `from` into `gate` of unit `unit`.
    pub fn w_h(&self, gate: Gate, unit: usize, from: usize) -> f64 {
        self.params[self.off_wh() + (gate as usize * self.hidden + unit) * self.hidden + from]
    }

    pub fn bias(&self, gate: Gate, unit: usize) -> f64 {
        self.params[self.off_b() + gate as usize * self.hidden + unit]
    }

    pub fn bias_mut(&mut self, gate: Gate, unit: usize) -> &mut f64 {
        let i = self.off_b() + gate as usize * self.hidden + unit;
        &mut self.params[i]
    }

    pub fn w_out(&self, unit: usize) -> f64 {
        self.params[self.off_out() + unit]
    }

    pub fn b_out(&self) -> f64 {
        self.params[self.off_out() + self.hidden]
    }
}

/// Per-step activations kept for the backward pass.
struct Trace {
    /// Gate activations `[i | f | g | o]`, `4H` per step.
    gates: Vec<f64>,
    /// Cell states, `H` per step, with the zero initial state first.
    cells: Vec<f64>,
    /// Hidden states, same layout as `cells`.
    hiddens: Vec<f64>,
}

fn run(m: &LstmRegressor, window: &[f64], keep: bool) -> (f64, Option<Trace>) {
    let h_n = m.hidden;
    let mut h = vec![0.0; h_n];
    let mut c = vec![0.0; h_n];
    let mut a = vec![0.0; 4 * h_n];
    let mut trace = keep.then(|| Trace {
        gates: Vec::with_capacity(window.len() * 4 * h_n),
        cells: c.clone(),
        hiddens: h.clone(),
    });
    let wh = &m.params[m.off_wh()..m.off_b()];
    let b = &m.params[m.off_b()..m.off_out()];
    for &x in window {
        for r in 0..4 * h_n {
            let row = &wh[r * h_n..(r + 1) * h_n];
            a[r] = m.params[r] * x + b[r] + row.iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>();
        }
        for u in 0..h_n {
            let i = sigmoid(a[u]);
            let f = sigmoid(a[h_n + u]);
            let g = a[2 * h_n + u].tanh();
            let o = sigmoid(a[3 * h_n + u]);
            a[u] = i;
            a[h_n + u] = f;
            a[2 * h_n + u] = g;
            a[3 * h_n + u] = o;
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        if let Some(t) = trace.as_mut() {
            t.gates.extend_from_slice(&a);
            t.cells.extend_from_slice(&c);
            t.hiddens.extend_from_slice(&h);
        }
    }
    let off = m.off_out();
    let y = m.params[off + h_n] + (0..h_n).map(|u| m.params[off + u] * h[u]).sum::<f64>();
    (y, trace)
}

/// Scalar prediction for one window; the recurrence runs exactly
/// `window.len()` steps from a zero state.
pub fn lstm_forward(m: &LstmRegressor, window: &[f64]) -> f64 {
    run(m, window, false).0
}

/// Accumulate `scale · ∂(y - target)²/∂θ` into `grad`, returning the
/// squared error.
fn backprop(m: &LstmRegressor, ex: &Example, scale: f64, grad: &mut [f64]) -> f64 {
    let h_n = m.hidden;
    let (y, trace) = run(m, &ex.window, true);
    let tr = trace.expect("trace requested");
    let err = y - ex.target;
    let dy = 2.0 * err * scale;
    let steps = ex.window.len();
    let (off_wh, off_b, off_out) = (m.off_wh(), m.off_b(), m.off_out());

    let h_last = &tr.hiddens[steps * h_n..(steps + 1) * h_n];
    let mut dh = vec![0.0; h_n];
    for u in 0..h_n {
        grad[off_out + u] += dy * h_last[u];
        dh[u] = dy * m.params[off_out + u];
    }
    grad[off_out + h_n] += dy;

    let mut dc = vec![0.0; h_n];
    let mut da = vec![0.0; 4 * h_n];
    for s in (0..steps).rev() {
        let gates = &tr.gates[s * 4 * h_n..(s + 1) * 4 * h_n];
        let c_prev = &tr.cells[s * h_n..(s + 1) * h_n];
        let c_cur = &tr.cells[(s + 1) * h_n..(s + 2) * h_n];
        let h_prev = &tr.hiddens[s * h_n..(s + 1) * h_n];
        for u in 0..h_n {
            let (i, f, g, o) = (gates[u], gates[h_n + u], gates[2 * h_n + u], gates[3 * h_n + u]);
            let tc = c_cur[u].tanh();
            let d_o = dh[u] * tc;
            let dcu = dc[u] + dh[u] * o * (1.0 - tc * tc);
            da[u] = dcu * g * i * (1.0 - i);
            da[h_n + u] = dcu * c_prev[u] * f * (1.0 - f);
            da[2 * h_n + u] = dcu * i * (1.0 - g * g);
            da[3 * h_n + u] = d_o * o * (1.0 - o);
            dc[u] = dcu * f;
        }
        let x = ex.window[s];
        for r in 0..4 * h_n {
            grad[r] += da[r] * x;
            grad[off_b + r] += da[r];
            let row = &mut grad[off_wh + r * h_n..off_wh + (r + 1) * h_n];
            for (gk, hk) in row.iter_mut().zip(h_prev) {
                *gk += da[r] * hk;
            }
        }
        for (k, dhk) in dh.iter_mut().enumerate() {
            *dhk = (0..4 * h_n).map(|r| m.params[off_wh + r * h_n + k] * da[r]).sum();
        }
    }
    err * err
}

/// Mean squared error over `examples` and its gradient.
///
/// Per-example gradients are computed in parallel and summed in example order,
/// so the result does not depend on the thread count.
pub fn loss_and_gradient(m: &LstmRegressor, examples: &[Example]) -> (f64, Vec<f64>) {
    let n = examples.len().max(1) as f64;
    let parts = par::map(examples, |ex| {
        let mut g = vec![0.0; m.params.len()];
        let se = backprop(m, ex, 1.0 / n, &mut g);
        (se, g)
    });
    let mut grad = vec![0.0; m.params.len()];
    let mut loss = 0.0;
    for (se, g) in parts {
        loss += se;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss / n, grad)
}

pub fn mse_on(m: &LstmRegressor, examples: &[Example]) -> f64 {
    let se: Vec<f64> = par::map(examples, |ex| {
        let e = lstm_forward(m, &ex.window) - ex.target;
        e * e
    });
    se.iter().sum::<f64>() / examples.len().max(1) as f64
}

/// Train a freshly initialized regressor.
pub fn lstm_train(examples: &[Example], cfg: &ForecastConfig) -> Result<LstmRegressor> {
    lstm_train_from(LstmRegressor::init(cfg.hidden_units, cfg.rng_seed), examples, cfg)
}

/// Mini-batch Adam on mean squared error, starting from `model`.
///
/// Returns the parameters with the lowest full training MSE seen at the end
/// of any epoch, the starting point included.
pub fn lstm_train_from(model: LstmRegressor, examples: &[Example], cfg: &ForecastConfig) -> Result<LstmRegressor> {
    if examples.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.rng_seed, 0x4c53_544d));
    let mut m = model;
    let mut best = m.clone();
    let mut best_mse = mse_on(&m, examples);
    if !best_mse.is_finite() {
        return Err(Error::Numerical("initial training loss is not finite".into()));
    }
    let p = m.params.len();
    let (mut m1, mut m2) = (vec![0.0; p], vec![0.0; p]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let batch_ex: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = loss_and_gradient(&m, &batch_ex);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "LSTM training diverged in epoch {epoch}; try a lower learning rate (now {})",
                    cfg.learning_rate
                )));
            }
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for k in 0..p {
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
                m.params[k] -= cfg.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
        }
        let mse = mse_on(&m, examples);
        if !mse.is_finite() {
            return Err(Error::Numerical(format!(
                "LSTM training diverged in epoch {epoch}; try a lower learning rate (now {})",
                cfg.learning_rate
            )));
        }
        if mse < best_mse {
            best_mse = mse;
            best = m.clone();
        }
    }
    Ok(best)
}

/// Flat text: a `lstm <hidden>` header, then per tensor a
/// `<name> <rows> <cols>` line followed by its values row-major, one per line.
pub fn write_regressor(m: &LstmRegressor, path: &Path) -> Result<()> {
    let h = m.hidden;
    let mut out = format!("lstm {h}\n");
    let blocks = [
        ("w_x", 4 * h, 1, 0),
        ("w_h", 4 * h, h, m.off_wh()),
        ("b", 4 * h, 1, m.off_b()),
        ("w_out", 1, h, m.off_out()),
        ("b_out", 1, 1, m.off_out() + h),
    ];
    for (name, rows, cols, off) in blocks {
        let _ = writeln!(out, "{name} {rows} {cols}");
        for v in &m.params[off..off + rows * cols] {
            let _ = writeln!(out, "{v:e}");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_regressor(path: &Path) -> Result<LstmRegressor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let hidden: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("lstm "))
        .and_then(|h| h.trim().parse().ok())
        .ok_or_else(|| bad("missing `lstm <hidden>` header"))?;
    let mut params = Vec::with_capacity(param_count(hidden));
    while let Some(head) = lines.next() {
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad(&format!("bad tensor header `{head}`")));
        }
        let rows: usize = parts[1].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = parts[2].parse().map_err(|_| bad("bad column count"))?;
        for _ in 0..rows * cols {
            let v = lines
                .next()
                .ok_or_else(|| bad(&format!("tensor `{}` is truncated", parts[0])))?;
            params.push(v.trim().parse::<f64>().map_err(|_| bad(&format!("bad value `{v}`")))?);
        }
    }
    LstmRegressor::from_params(hidden, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(window: &[f64], target: f64) -> Example {
        Example {
            node_id: "n".into(),
            target_index: 0,
            window: window.to_vec(),
            target,
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = LstmRegressor::zeros(8);
        assert_eq!(lstm_forward(&m, &[0.3, -1.0, 2.0]), 0.0);
    }

    #[test]
    fn finite_difference_gradient() {
        let m = LstmRegressor::init(5, 3);
        let batch = [ex(&[0.1, 0.4, -0.2], 0.3), ex(&[0.5, 0.0, 0.2], -0.1), ex(&[-0.3, 0.9, 0.7], 0.8)];
        let (_, g) = loss_and_gradient(&m, &batch);
        let h = 1e-6;
        for k in 0..m.params.len() {
            let mut plus = m.clone();
            plus.params[k] += h;
            let mut minus = m.clone();
            minus.params[k] -= h;
            let fd = (mse_on(&plus, &batch) - mse_on(&minus, &batch)) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-8);
            assert!((fd - g[k]).abs() / denom < 1e-3, "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let cfg = ForecastConfig {
            epochs: 0,
            ..Default::default()
        };
        let trained = lstm_train(&[ex(&[0.1], 0.2)], &cfg).unwrap();
        assert_eq!(trained, LstmRegressor::init(cfg.hidden_units, cfg.rng_seed));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ForecastConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..Default::default()
        };
        let data: Vec<Example> = (0..10).map(|i| ex(&[i as f64], 1e200)).collect();
        assert!(matches!(lstm_train(&data, &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn text_round_trip() {
        let m = LstmRegressor::init(4, 9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_regressor(&m, &p).unwrap();
        assert_eq!(read_regressor(&p).unwrap(), m);
    }
}
