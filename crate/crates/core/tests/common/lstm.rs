//! Step-by-step LSTM cell evaluation written from the textbook equations,
//! reading weights only through the named accessors.

use txdrift::forecast::{Gate, LstmRegressor};

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn reference_forward(m: &LstmRegressor, window: &[f64]) -> f64 {
    let n = m.hidden();
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for &x in window {
        let pre = |gate: Gate, u: usize, h: &[f64]| {
            let mut s = m.w_x(gate, u) * x + m.bias(gate, u);
            for (k, hk) in h.iter().enumerate() {
                s += m.w_h(gate, u, k) * hk;
            }
            s
        };
        let mut h_next = vec![0.0; n];
        let mut c_next = vec![0.0; n];
        for u in 0..n {
            let i_t = logistic(pre(Gate::Input, u, &h));
            let f_t = logistic(pre(Gate::Forget, u, &h));
            let g_t = pre(Gate::Candidate, u, &h).tanh();
            let o_t = logistic(pre(Gate::Output, u, &h));
            c_next[u] = f_t * c[u] + i_t * g_t;
            h_next[u] = o_t * c_next[u].tanh();
        }
        h = h_next;
        c = c_next;
    }
    m.b_out() + (0..n).map(|u| m.w_out(u) * h[u]).sum::<f64>()
}
